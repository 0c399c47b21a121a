/**
 * Command line for the feature exporter.
 *
 *   node dist/cli.js --images DIR --out DIR [--max-regions 36]
 *       [--threshold 0.2] [--seed 0] [--depth 32] [--grid 7]
 */

import { exportFeatures } from './export.js'

function parseArgs(argv: string[]): Record<string, string> {
  const out: Record<string, string> = {}
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i]
    if (!key.startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`malformed arguments near ${key}`)
    }
    out[key.slice(2)] = argv[i + 1]
  }
  return out
}

function main(): number {
  let args: Record<string, string>
  try {
    args = parseArgs(process.argv.slice(2))
  } catch (err) {
    console.error((err as Error).message)
    return 1
  }
  const known = new Set(['images', 'out', 'max-regions', 'threshold', 'seed', 'depth', 'grid'])
  const unknown = Object.keys(args).filter(k => !known.has(k))
  if (unknown.length > 0 || !args.images || !args.out) {
    console.error(
      'usage: cli --images DIR --out DIR [--max-regions N] [--threshold T] ' +
        '[--seed S] [--depth D] [--grid G]',
    )
    if (unknown.length > 0) console.error(`unknown flags: ${unknown.join(', ')}`)
    return 1
  }
  try {
    const result = exportFeatures({
      imageDir: args.images,
      outDir: args.out,
      maxRegions: args['max-regions'] ? parseInt(args['max-regions'], 10) : undefined,
      scoreThreshold: args.threshold ? parseFloat(args.threshold) : undefined,
      seed: args.seed ? parseInt(args.seed, 10) : undefined,
      depth: args.depth ? parseInt(args.depth, 10) : undefined,
      gridSize: args.grid ? parseInt(args.grid, 10) : undefined,
    })
    console.log(result.manifestPath)
    return 0
  } catch (err) {
    console.error(`export failed: ${(err as Error).message}`)
    return 2
  }
}

process.exit(main())
