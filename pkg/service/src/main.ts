/**
 * Entry point. Default mode answers frames on stdin/stdout; --port starts
 * a TCP listener instead. Logs go to stderr so stdio framing stays clean.
 */

import { DualEncoder } from './encoder';
import { ServiceHandler, serveStream, serveTcp } from './server';

interface CliOptions {
  seed: number;
  port?: number;
  host: string;
  weights?: string;
  device: string;
}

function parseArgs(argv: string[]): CliOptions {
  const opts: CliOptions = { seed: 0, host: '127.0.0.1', device: 'cpu' };
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    const next = () => {
      const v = argv[++i];
      if (v === undefined) throw new Error(`${arg} needs a value`);
      return v;
    };
    switch (arg) {
      case '--seed':
        opts.seed = Number.parseInt(next(), 10);
        break;
      case '--port':
        opts.port = Number.parseInt(next(), 10);
        break;
      case '--host':
        opts.host = next();
        break;
      case '--weights':
        opts.weights = next();
        break;
      case '--device':
        opts.device = next();
        break;
      case '--stdio':
        break; // the default
      case '--help':
        process.stderr.write(
          'usage: main.js [--stdio | --port N [--host H]] [--seed N] [--weights FILE] [--device cpu]\n',
        );
        process.exit(0);
        break;
      default:
        throw new Error(`unknown flag ${arg}`);
    }
  }
  if (Number.isNaN(opts.seed)) throw new Error('--seed must be an integer');
  if (opts.port !== undefined && (Number.isNaN(opts.port) || opts.port < 0 || opts.port > 65535)) {
    throw new Error('--port must be a valid TCP port');
  }
  if (opts.device !== 'cpu') {
    throw new Error(`unsupported device ${opts.device}; this build runs on cpu only`);
  }
  return opts;
}

function main(): void {
  let opts: CliOptions;
  let handler: ServiceHandler;
  try {
    opts = parseArgs(process.argv.slice(2));
    handler = new ServiceHandler(new DualEncoder(opts.seed, opts.weights));
  } catch (err) {
    process.stderr.write(`startup error: ${(err as Error).message}\n`);
    process.exit(1);
    return;
  }

  if (opts.port !== undefined) {
    serveTcp(handler, opts.host, opts.port, (port) => {
      process.stderr.write(`listening on ${opts.host}:${port}\n`);
    });
  } else {
    void serveStream(handler, process.stdin, process.stdout).then(() => process.exit(0));
  }
}

main();
