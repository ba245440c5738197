/**
 * TypeScript bindings for the eccmoco motion-compensation toolkit.
 *
 * The native core is consumed strictly through its command-line interface and
 * file formats: inputs are serialized to the toolkit's dataset schema
 * (geometry.json arrays of 12 row-major numbers, little-endian float32
 * projection raws), results are read back from its JSON/CSV outputs. Values
 * survive the boundary bit-exactly because both sides serialize doubles in
 * shortest round-trip form.
 */

import { spawnSync } from "child_process";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";

export const VERSION = "0.1.0";

export type Scenario = "oop" | "ip" | "full";

const SCENARIOS: Scenario[] = ["full", "ip", "oop"];

export class ValidationError extends Error {}

export class NativeError extends Error {
  readonly exitCode: number | null;
  readonly stderr: string;

  constructor(message: string, exitCode: number | null, stderr: string) {
    super(`${message}${stderr ? `: ${stderr.trim()}` : ""}`);
    this.exitCode = exitCode;
    this.stderr = stderr;
  }
}

export interface EccOptions {
  /** Pencil sampling step in degrees (native default 0.1). */
  kappaStepDeg?: number;
  /** Fixed sweep limit in degrees; omitted = per-pair detector-derived. */
  kappaMaxDeg?: number;
  pairStride?: number;
  /** Radon table angular resolution (native default 200). */
  nAlpha?: number;
  threads?: number;
  /** Command used to launch the native CLI; defaults to ECCMOCO_CLI or `eccmoco`. */
  cli?: string[];
}

export interface TotalCostRequest extends EccOptions {
  /** N projection matrices, each 3 rows x 4 columns. */
  matrices: number[][][];
  /** N projection images, each H rows x W columns (line-integral values). */
  images: number[][][];
  /** Optional N x 6 rigid parameters (tx,ty,tz in mm; rx,ry,rz in degrees). */
  params?: number[][];
}

export interface CompensateRequest extends EccOptions {
  /** Dataset directory produced by the native `simulate` command. */
  dataset: string;
  scenario: Scenario;
  maxIter?: number;
  xTol?: number;
  fTol?: number;
  /** Initial simplex step as a fraction of each bound half-width. */
  initialStep?: number;
}

export interface CostHistoryEntry {
  iteration: number;
  cost: number;
}

export interface CompensateResult {
  /** Spline node positions in projection-index units. */
  nodeIndices: number[];
  /** 6 x M node values; translations in um, rotations in degrees. */
  nodeValues: number[][];
  nProjections: number;
  /** Cost before the first simplex iteration. */
  initialCost: number;
  /** Best cost after each simplex iteration (length = iterations run). */
  history: CostHistoryEntry[];
  finalCost: number;
  /** Recovered projection matrices, N x 3 x 4. */
  recoveredMatrices: number[][][];
}

function resolveCli(override?: string[]): string[] {
  if (override && override.length > 0) return override;
  const env = process.env.ECCMOCO_CLI;
  if (env && env.trim().length > 0) return env.trim().split(/\s+/);
  return ["eccmoco"];
}

function runNative(cli: string[], args: string[]): string {
  const proc = spawnSync(cli[0], [...cli.slice(1), ...args], {
    encoding: "utf-8",
    maxBuffer: 1 << 26,
  });
  if (proc.error) {
    throw new NativeError(`failed to launch ${cli.join(" ")}`, null, String(proc.error));
  }
  if (proc.status !== 0) {
    throw new NativeError(
      `native command exited with code ${proc.status}`,
      proc.status,
      proc.stderr ?? "",
    );
  }
  return proc.stdout;
}

export function nativeVersion(opts: EccOptions = {}): string {
  return runNative(resolveCli(opts.cli), ["--version"]).trim();
}

function checkMatrices(matrices: number[][][]): number {
  if (!Array.isArray(matrices) || matrices.length < 2) {
    throw new ValidationError("matrices must hold at least 2 projections");
  }
  matrices.forEach((m, i) => {
    if (!Array.isArray(m) || m.length !== 3 || m.some((row) => row.length !== 4)) {
      throw new ValidationError(`matrix ${i} must be 3x4, got ${describeShape(m)}`);
    }
    if (m.flat().some((v) => typeof v !== "number" || !Number.isFinite(v))) {
      throw new ValidationError(`matrix ${i} contains non-finite entries`);
    }
  });
  return matrices.length;
}

function checkImages(images: number[][][], n: number): [number, number] {
  if (!Array.isArray(images) || images.length !== n) {
    throw new ValidationError(`expected ${n} images to match the matrices, got ${images.length}`);
  }
  const rows = images[0].length;
  const cols = images[0][0]?.length ?? 0;
  if (rows < 2 || cols < 2) {
    throw new ValidationError(`images must be H x W with H, W >= 2, got ${rows}x${cols}`);
  }
  images.forEach((img, i) => {
    if (img.length !== rows || img.some((r) => r.length !== cols)) {
      throw new ValidationError(`image ${i} must be ${rows}x${cols}, got ${describeShape(img)}`);
    }
  });
  return [rows, cols];
}

function describeShape(a: unknown): string {
  if (!Array.isArray(a)) return typeof a;
  const dims: number[] = [];
  let cur: unknown = a;
  while (Array.isArray(cur)) {
    dims.push(cur.length);
    cur = cur[0];
  }
  return dims.join("x");
}

function writeImageRaw(file: string, img: number[][]): void {
  const flat = new Float32Array(img.length * img[0].length);
  let k = 0;
  for (const row of img) {
    for (const v of row) flat[k++] = v;
  }
  if (os.endianness() !== "LE") {
    throw new ValidationError("big-endian hosts are not supported for raw output");
  }
  fs.writeFileSync(file, Buffer.from(flat.buffer, flat.byteOffset, flat.byteLength));
}

function eccArgs(opts: EccOptions): string[] {
  const args: string[] = [];
  if (opts.kappaStepDeg !== undefined) args.push("--kappa-step-deg", String(opts.kappaStepDeg));
  if (opts.kappaMaxDeg !== undefined) args.push("--kappa-max-deg", String(opts.kappaMaxDeg));
  if (opts.pairStride !== undefined) args.push("--pair-stride", String(opts.pairStride));
  if (opts.nAlpha !== undefined) args.push("--n-alpha", String(opts.nAlpha));
  if (opts.threads !== undefined) args.push("--threads", String(opts.threads));
  return args;
}

/**
 * Evaluate the epipolar-consistency cost of a set of projections.
 *
 * Numerically identical to the native `total_cost`: the arrays are handed to
 * the CLI through its own file formats and the result parsed from its JSON
 * output, so the returned double matches the native value bit for bit.
 */
export function totalCost(req: TotalCostRequest): number {
  const n = checkMatrices(req.matrices);
  const [rows, cols] = checkImages(req.images, n);
  if (req.params !== undefined) {
    if (req.params.length !== n || req.params.some((p) => p.length !== 6)) {
      throw new ValidationError(
        `params must be ${n}x6 (tx,ty,tz,rx,ry,rz), got ${describeShape(req.params)}`,
      );
    }
  }
  const work = fs.mkdtempSync(path.join(os.tmpdir(), "eccmoco-cost-"));
  try {
    const geometry = path.join(work, "geometry.json");
    fs.writeFileSync(
      geometry,
      JSON.stringify(req.matrices.map((m) => m.flat())),
    );
    const projDir = path.join(work, "proj");
    fs.mkdirSync(projDir);
    req.images.forEach((img, i) => {
      writeImageRaw(path.join(projDir, `view_${String(i).padStart(4, "0")}.raw`), img);
    });
    const args = [
      "cost", "--geometry", geometry, "--proj", projDir,
      "--rows", String(rows), "--cols", String(cols),
      ...eccArgs(req),
    ];
    if (req.params !== undefined) {
      const paramsFile = path.join(work, "params.json");
      fs.writeFileSync(paramsFile, JSON.stringify(req.params));
      args.push("--params", paramsFile);
    }
    const out = runNative(resolveCli(req.cli), args);
    const lines = out.trim().split("\n");
    const parsed = JSON.parse(lines[lines.length - 1]) as { cost: number };
    return parsed.cost;
  } finally {
    fs.rmSync(work, { recursive: true, force: true });
  }
}

/**
 * Run the native motion compensation on a dataset directory and return the
 * estimated spline, the cost history and the recovered matrices in memory.
 */
export function compensate(req: CompensateRequest): CompensateResult {
  if (!SCENARIOS.includes(req.scenario)) {
    throw new ValidationError(
      `scenario must be one of {oop, ip, full}, got ${JSON.stringify(req.scenario)}`,
    );
  }
  if (!fs.existsSync(path.join(req.dataset, "meta.json"))) {
    throw new ValidationError(`${req.dataset} is not a dataset directory (missing meta.json)`);
  }
  const args = ["compensate", req.dataset, "--scenario", req.scenario, ...eccArgs(req)];
  if (req.maxIter !== undefined) args.push("--max-iter", String(req.maxIter));
  if (req.xTol !== undefined) args.push("--x-tol", String(req.xTol));
  if (req.fTol !== undefined) args.push("--f-tol", String(req.fTol));
  if (req.initialStep !== undefined) args.push("--initial-step", String(req.initialStep));
  runNative(resolveCli(req.cli), args);

  const spline = JSON.parse(
    fs.readFileSync(path.join(req.dataset, "spline_est.json"), "utf-8"),
  ) as { node_indices: number[]; node_values: number[][]; n_projections: number };
  const log = fs.readFileSync(path.join(req.dataset, "cost_log.csv"), "utf-8")
    .trim().split("\n").slice(1)
    .map((line) => {
      const [it, cost] = line.split(",");
      return { iteration: Number(it), cost: Number(cost) };
    });
  const recovered = (JSON.parse(
    fs.readFileSync(path.join(req.dataset, "geometry_recovered.json"), "utf-8"),
  ) as number[][]).map((flat) => [flat.slice(0, 4), flat.slice(4, 8), flat.slice(8, 12)]);
  const history = log.filter((e) => e.iteration > 0);
  return {
    nodeIndices: spline.node_indices,
    nodeValues: spline.node_values,
    nProjections: spline.n_projections,
    initialCost: log[0].cost,
    history,
    finalCost: history.length > 0 ? history[history.length - 1].cost : log[0].cost,
    recoveredMatrices: recovered,
  };
}
