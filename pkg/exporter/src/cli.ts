/**
 * Command line entry points.
 *
 * Usage:
 *   node dist/cli.js export --ckpt checkpoint.json --out network.json [--exits SPEC] [--probes N]
 *   node dist/cli.js make-fixture --seed 0 --out fixtures/digits [--threshold 0.9]
 *
 * SPEC overrides exit thresholds: either one value for every exit ("0.85")
 * or per-exit pairs ("0:0.85,1:0.9").
 */

import { exportCheckpoint } from './exporter';
import { makeFixture } from './fixture';

interface Args {
  [key: string]: string;
}

function parseArgs(argv: string[]): { command: string; args: Args } {
  const [command, ...rest] = argv;
  const args: Args = {};
  for (let i = 0; i < rest.length; i++) {
    const arg = rest[i];
    if (!arg.startsWith('--')) throw new Error(`unexpected argument: ${arg}`);
    const value = rest[i + 1];
    if (value === undefined) throw new Error(`missing value for ${arg}`);
    args[arg.slice(2)] = value;
    i++;
  }
  return { command, args };
}

function parseExitSpec(spec: string): Map<number, number> {
  const out = new Map<number, number>();
  const parts = spec.split(',');
  if (parts.length === 1 && !parts[0].includes(':')) {
    // single threshold applied to every exit; a large bound keeps it open-ended
    const t = Number(parts[0]);
    for (let i = 0; i < 64; i++) out.set(i, t);
    return out;
  }
  for (const part of parts) {
    const [idx, t] = part.split(':');
    out.set(Number(idx), Number(t));
  }
  return out;
}

async function run(): Promise<number> {
  const { command, args } = parseArgs(process.argv.slice(2));
  if (command === 'export') {
    if (!args.ckpt || !args.out) throw new Error('export needs --ckpt and --out');
    const manifest = await exportCheckpoint(args.ckpt, args.out, {
      thresholds: args.exits ? parseExitSpec(args.exits) : undefined,
      probes: args.probes ? Number(args.probes) : undefined,
    });
    console.log(JSON.stringify({ out: args.out, probeAgreement: manifest.probeAgreement }));
    return 0;
  }
  if (command === 'make-fixture') {
    if (args.seed === undefined || !args.out) throw new Error('make-fixture needs --seed and --out');
    const result = await makeFixture(args.out, Number(args.seed), {
      threshold: args.threshold ? Number(args.threshold) : undefined,
    });
    console.log(JSON.stringify({ network: result.networkPath, meta: result.meta }));
    return 0;
  }
  throw new Error(`unknown command: ${command ?? '(none)'}; use export or make-fixture`);
}

run()
  .then((code) => process.exit(code))
  .catch((err) => {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    process.exit(1);
  });
