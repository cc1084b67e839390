"""End-to-end orchestration and the ``mfbd`` command line.

Subcommands: ``generate`` (synthesize a dataset file), ``run`` (the full
pipeline: subspace, optional inflation, footprint, solve, post-scale,
metrics), ``bench-svd`` (timing grid over SVD backends), and ``figures``
(replication artifacts: spectra, misalignment, eigenvector images, ascent
history, inflation growth).

Configs are flat ``key = value`` text files (``#`` comments allowed);
:class:`ExperimentConfig` round-trips through that format bit-exactly.
Every stage is seeded: a config plus its seed reproduces all CSV artifacts
byte for byte (timing files are the documented exception; wall time is not
reproducible).

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O
error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset as dataset_io
from . import eigsolve, mle, pgm, synth
from .errors import (ConfigError, DataFormatError, DimensionError, MemoryBudgetError,
                     MetricError, MfbdError, RankDeficiencyError, SolverError)
from .footprint import Footprint, dilate, disk_footprint
from .metrics import EvalMask, ni_rms, subspace_angle, write_csv
from .subspace import SvdBackendChoice, identify_subspace, inflate, svd_truncated
from .synth import SequenceSpec, generate_sequence, ground_truth_image

__all__ = ["ExperimentConfig", "PRESETS", "cmd_generate", "cmd_run",
           "cmd_bench_svd", "cmd_figures", "main"]


# ------------------------------------------------------------ configuration

@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs, serializable as ``key = value`` text.

    Zero means "derive the default" for the numeric knobs documented below:
    ``m0``/``m`` fall back to the footprint size, ``svd_rank`` to the filter
    size, ``alpha`` to one over the filter size.
    """

    truth_kind: str = "shapes"
    truth_rows: int = 32
    truth_cols: int = 32
    psf_rows: int = 3
    psf_cols: int = 3
    footprint: str = "full"  # "full" or "disk:<count>"
    m0: int = 0
    n: int = 20
    noise_var: float = 0.0
    psf_spread: float = 0.5
    seed: int = 0
    svd_kind: str = "randomized"
    svd_rank: int = 0
    svd_oversampling: int = 10
    svd_power_iters: int = 2
    svd_block_bytes: int = 0
    inflate_rows: int = 0
    inflate_cols: int = 0
    footprint_mode: str = "known"  # known | estimate_sectioned | all_ones
    section_scale: float = 7.5
    solver: str = "rayleigh"  # rayleigh | mle
    m: int = 0
    alpha: float = 0.0
    mu_delta: float = 1e-3
    refine_mu_delta: float = 1e-4
    mle_tau: float = 1.0
    mle_max_iter: int = 20000
    clamp: bool = True
    clamp_lo: float = 0.0
    clamp_hi: float = 255.0
    output_dir: str = "."

    def __post_init__(self):
        if self.footprint_mode not in ("known", "estimate_sectioned", "all_ones"):
            raise ConfigError(f"unknown footprint_mode {self.footprint_mode!r}")
        if self.solver not in ("rayleigh", "mle"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.svd_kind not in ("dense", "randomized", "single_pass"):
            raise ConfigError(f"unknown svd_kind {self.svd_kind!r}")
        if not (self.footprint == "full" or self.footprint.startswith("disk:")):
            raise ConfigError(f"footprint must be 'full' or 'disk:<count>', "
                              f"got {self.footprint!r}")

    # -- serialization ------------------------------------------------------

    def to_text(self):
        lines = ["# mfbd experiment configuration"]
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float):
                v = repr(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        fields = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for ln, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in fields:
                raise ConfigError(f"line {ln}: unknown key {key!r}")
            values[key] = _parse_value(fields[key], key, val)
        return cls(**values)

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text())

    # -- derived quantities --------------------------------------------------

    @property
    def psf_shape(self):
        return (self.psf_rows, self.psf_cols)

    @property
    def inflate_shape(self):
        if self.inflate_rows > 0 and self.inflate_cols > 0:
            return (self.inflate_rows, self.inflate_cols)
        return None

    def make_footprint(self):
        if self.footprint == "full":
            return Footprint.all_ones(self.psf_shape)
        count = int(self.footprint.split(":", 1)[1])
        return disk_footprint(self.psf_shape, count)


def _parse_value(ftype, key, val):
    tname = ftype if isinstance(ftype, str) else ftype.__name__
    try:
        if tname == "int":
            return int(val)
        if tname == "float":
            return float(val)
        if tname == "bool":
            if val.lower() in ("true", "1", "yes"):
                return True
            if val.lower() in ("false", "0", "no"):
                return False
            raise ValueError(val)
        return val
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {val!r}") from exc


PRESETS = {
    # noise-free exact recovery; the quotient lands at numerical zero right
    # away, so the stop tolerance sits far below it
    "exact-recovery": dict(
        truth_kind="shapes", truth_rows=32, truth_cols=32, psf_rows=3, psf_cols=3,
        footprint="full", n=20, noise_var=0.0, psf_spread=0.5, svd_kind="dense",
        footprint_mode="all_ones", mu_delta=1e-12),
    # 128x128 truth, 10x10 filters varying 57 footprint pixels, n=1000
    "moderate-0.1": dict(
        truth_kind="shapes", truth_rows=128, truth_cols=128, psf_rows=10, psf_cols=10,
        footprint="disk:57", n=1000, noise_var=0.1, psf_spread=0.5,
        svd_kind="randomized", svd_rank=57, footprint_mode="estimate_sectioned",
        section_scale=7.5),
    "moderate-1": dict(
        truth_kind="shapes", truth_rows=128, truth_cols=128, psf_rows=10, psf_cols=10,
        footprint="disk:57", n=1000, noise_var=1.0, psf_spread=0.5,
        svd_kind="randomized", svd_rank=57, footprint_mode="estimate_sectioned",
        section_scale=7.5),
    "moderate-10": dict(
        truth_kind="shapes", truth_rows=128, truth_cols=128, psf_rows=10, psf_cols=10,
        footprint="disk:57", n=1000, noise_var=10.0, psf_spread=0.5,
        svd_kind="randomized", svd_rank=57, footprint_mode="estimate_sectioned",
        section_scale=3.46, inflate_rows=2, inflate_cols=2),
    # 40x40 truth, full 5x5 filters, n=5000, very noisy; m = |a| so no
    # footprint work is needed
    "high-noise": dict(
        truth_kind="shapes", truth_rows=40, truth_cols=40, psf_rows=5, psf_cols=5,
        footprint="full", n=5000, noise_var=50.0, psf_spread=1.0,
        svd_kind="randomized", svd_rank=25, footprint_mode="all_ones"),
}


def resolve_config(preset=None, config_file=None, overrides=()):
    """Compose a config: preset defaults, then a file, then key=value pairs."""
    values = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choices: {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    if config_file is not None:
        file_cfg = ExperimentConfig.load(config_file)
        values.update(dataclasses.asdict(file_cfg))
    fields = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, val = (part.strip() for part in item.split("=", 1))
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_value(fields[key], key, val)
    return ExperimentConfig(**values)


# ------------------------------------------------------------------ stages

def cmd_generate(config, out_dir):
    """Generate a dataset file plus sidecars per the config; returns its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = ground_truth_image((config.truth_rows, config.truth_cols),
                               kind=config.truth_kind, seed=config.seed)
    footprint = config.make_footprint()
    m0 = config.m0 or footprint.count
    spec = SequenceSpec(truth, config.psf_shape, m0=m0, n=config.n,
                        noise_var=config.noise_var, seed=config.seed,
                        footprint=footprint, psf_spread=config.psf_spread)
    obs, psfs = generate_sequence(spec, storage_dir=out)
    path = out / "dataset.mfbd"
    dataset_io.write_dataset(path, obs, config.psf_shape, noise_var=config.noise_var,
                             truth=truth, psfs=psfs, footprint=footprint)
    config.save(out / "config.txt")
    return path


def _svd_choice(config, rank):
    return SvdBackendChoice(kind=config.svd_kind, rank=rank,
                            oversampling=config.svd_oversampling,
                            power_iters=config.svd_power_iters,
                            block_bytes=config.svd_block_bytes, seed=config.seed)


def _known_m(config, meta, d_shape):
    """The signal dimension implied by the stored footprint, if any."""
    if config.m > 0:
        return config.m
    stored = meta.get("footprint")
    if stored is None:
        return None
    fp = dilate(stored, d_shape) if d_shape else stored
    return fp.count


def cmd_run(config, dataset_path, out_dir=None):
    """Run the pipeline on a dataset; writes artifacts, returns a result dict.

    Stages: subspace identification, optional inflation, footprint
    (known / estimated on sections / all ones), eigenvector or ascent
    solve, brightness post-scaling, metrics.  Failures are re-raised with
    the stage name prefixed.
    """
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings = []

    def stage(name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            result = fn(*args, **kwargs)
        except MfbdError as exc:
            raise type(exc)(f"[stage {name}] {exc}") from exc
        timings.append((name, time.perf_counter() - t0))
        return result

    obs, meta = stage("read", dataset_io.read_dataset, dataset_path,
                      mem_budget=1 << 28)
    header = meta["header"]
    psf_shape = header.psf_shape
    psf_size = psf_shape[0] * psf_shape[1]
    d_shape = config.inflate_shape
    rank = config.svd_rank or psf_size
    known_m = _known_m(config, meta, None)

    def identify():
        strategy = "known" if known_m else ("threshold" if header.noise_var == 0
                                            else "kink")
        return identify_subspace(obs, psf_size, _svd_choice(config, rank),
                                 strategy=strategy, known_m=known_m)

    sub = stage("subspace", identify)

    eff_psf = psf_shape
    if d_shape:
        known_m_inflated = _known_m(config, meta, d_shape)
        strategy = "known" if known_m_inflated else "threshold"
        sub, eff_psf = stage("inflate", inflate, sub, d_shape, psf_shape=psf_shape,
                             strategy=strategy, known_m=known_m_inflated)
    eff_size = eff_psf[0] * eff_psf[1]
    alpha = config.alpha or 1.0 / eff_size

    if config.footprint_mode == "known":
        stored = meta.get("footprint")
        if stored is None:
            raise ConfigError("footprint_mode=known but the dataset stores none")
        footprint = dilate(stored, d_shape) if d_shape else stored
    elif config.footprint_mode == "all_ones":
        footprint = Footprint.all_ones(eff_psf)
    else:
        footprint = stage(
            "footprint", eigsolve.estimate_footprint_sectioned, obs, psf_shape,
            section_scale=config.section_scale,
            choice=_svd_choice(config, sub.m), m=sub.m, alpha=alpha,
            seed=config.seed, inflate_d=d_shape, mu_delta=config.mu_delta,
            refine_mu_delta=config.refine_mu_delta)

    op = eigsolve.SubspaceResidualOperator(sub, eff_psf, footprint=footprint,
                                           alpha=alpha)
    report = None
    ascent = None
    if config.solver == "rayleigh":
        x_hat, report = stage("solve", eigsolve.rayleigh_solve, op,
                              mu_delta=config.mu_delta, seed=config.seed)
        report.gap = eigsolve.estimate_gap(op, x_hat, seed=config.seed)
    else:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(0xA5C, config.seed)))
        x0 = rng.uniform(0.0, 1.0, op.x_shape)
        ascent = stage("solve", mle.gradient_ascent, x0, sub, eff_psf,
                       tau=config.mle_tau, max_iter=config.mle_max_iter,
                       x_true=meta.get("truth"))
        x_hat = ascent.x

    estimate = stage("post_scale", eigsolve.post_scale, x_hat, obs)
    if config.clamp:
        estimate = np.clip(estimate, config.clamp_lo, config.clamp_hi)

    metrics_rows = [("n", header.n), ("noise_var", header.noise_var),
                    ("m", sub.m), ("footprint_count", footprint.count)]
    truth = meta.get("truth")
    result = {"estimate": estimate, "footprint": footprint, "subspace": sub,
              "report": report, "ascent": ascent, "config": config}
    if truth is not None:
        mask = None
        if meta.get("footprint") is not None:
            mask = EvalMask.from_footprint(meta["footprint"], header.y_shape)
        err_masked = ni_rms(estimate, truth, mask)
        metrics_rows.append(("ni_rms", err_masked))
        metrics_rows.append(("ni_rms_unmasked", ni_rms(estimate, truth)))
        result["ni_rms"] = err_masked
    if report is not None:
        metrics_rows.append(("mu_final", report.mu_history[-1]))
        metrics_rows.append(("solver_iterations", report.iterations))
        metrics_rows.append(("eigen_gap", report.gap))
        if report.gap is not None and report.gap < 10 * config.mu_delta:
            print(f"warning: eigenvalue gap {report.gap:.3e} is small; the "
                  "eigenvector may not be unique", file=sys.stderr)

    write_csv(out / "metrics.csv", ["name", "value"], metrics_rows)
    if report is not None:
        eigsolve.export_report(report, out / "solve_report.csv")
    if ascent is not None:
        mle.export_history(ascent, out / "ascent_history.csv")
    pgm.write_pgm(out / "estimate.pgm", estimate, lo=config.clamp_lo,
                  hi=config.clamp_hi)
    np.save(out / "estimate.npy", estimate)
    _write_footprint(out, footprint)
    config.save(out / "config.txt")
    with open(out / "timings.txt", "w") as fh:  # wall times; not reproducible
        for name, secs in timings:
            fh.write(f"{name}\t{secs:.3f}\n")
    return result


def _write_footprint(out, footprint):
    pgm.write_pgm(out / "footprint.pgm", footprint.h.astype(float), lo=0.0, hi=1.0)
    rows = ["".join(str(int(v)) for v in row) for row in footprint.h]
    (out / "footprint.txt").write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------- bench-svd

def cmd_bench_svd(out_dir, ns=(500, 4000), y_sizes=(100, 1000, 10_000),
                  backends=("randomized", "single_pass", "dense"), rank=25,
                  oversampling=10, dense_budget=1 << 30, seed=0):
    """Time the SVD backends over an (n, |y|) grid; writes bench_svd.csv.

    Infeasible cells (dense beyond the memory budget) are marked ``---``.
    The timing values are wall-clock seconds and are exempt from the
    byte-determinism guarantee.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ["backend"] + [f"n{n}_y{y}" for n in ns for y in y_sizes]
    rows = []
    for kind in backends:
        row = [kind]
        for n in ns:
            for y in y_sizes:
                if kind == "dense" and n * y * 8 > dense_budget:
                    row.append("---")
                    continue
                rng = np.random.default_rng(np.random.SeedSequence(
                    entropy=(0xBE7C, seed, n, y)))
                r = min(rank, y, n)
                target = (rng.standard_normal((y, r)) / np.sqrt(r)) @ \
                    rng.standard_normal((r, n))
                target += 0.05 * rng.standard_normal((y, n))
                choice = SvdBackendChoice(kind, rank=r,
                                          oversampling=oversampling, seed=seed,
                                          dense_budget=dense_budget)
                t0 = time.perf_counter()
                svd_truncated(target, choice)
                row.append(f"{time.perf_counter() - t0:.3f}")
        rows.append(row)
    write_csv(out / "bench_svd.csv", header, rows)
    return out / "bench_svd.csv"


# ------------------------------------------------------------------ figures

def _spectrum_experiment(quick):
    if quick:
        return dict(x_cols=309, psf=30, m0=10, n=1500)
    return dict(x_cols=1069, psf=70, m0=10, n=10_000)


def cmd_figures(out_dir, which=(), quick=False, seed=0):
    """Emit replication artifacts into ``out_dir``; returns written paths.

    ``which`` selects from spectrum, misalignment, eigenvectors, ascent,
    inflation; an empty selection is a no-op with a message.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not which:
        print("nothing to do: no figure artifacts selected")
        return []
    written = []
    levels = [0.0, 0.1, 1.0, 10.0]

    if "spectrum" in which or "misalignment" in which:
        p = _spectrum_experiment(quick)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(0xF16, seed)))
        x = rng.uniform(0, 255, (1, p["x_cols"]))
        spectra = {}
        subs = {}
        for var in levels:
            spec = SequenceSpec(x, (1, p["psf"]), m0=p["m0"], n=p["n"],
                                noise_var=var, seed=seed, psf_spread=0.1)
            obs, _ = generate_sequence(spec)
            sub = identify_subspace(obs, (1, p["psf"]),
                                    SvdBackendChoice("randomized", seed=seed),
                                    strategy="known", known_m=p["m0"])
            spectra[var] = sub.lam
            subs[var] = sub
        if "spectrum" in which:
            path = out / "fig_spectrum.csv"
            header = ["index"] + [f"lambda_sigma2_{var:g}" for var in levels]
            rows = [[i + 1] + [spectra[var][i] for var in levels]
                    for i in range(p["psf"])]
            write_csv(path, header, rows)
            written.append(path)
        if "misalignment" in which:
            path = out / "fig_misalignment.csv"
            ref = subs[0.0].U[:, :p["m0"]]
            rows = []
            for var in levels[1:]:
                ang = subspace_angle(ref, subs[var].U[:, :p["m0"]])
                rows.append([var, float(np.degrees(ang.mean())),
                             float(np.degrees(ang.max()))])
            write_csv(path, ["noise_var", "mean_angle_deg", "max_angle_deg"], rows)
            written.append(path)

    if "eigenvectors" in which:
        size, n, m0 = (32, 600, 9) if quick else (64, 2500, 25)
        psf = (3, 3) if quick else (5, 5)
        truth = ground_truth_image((size, size), kind="shapes", seed=seed)
        spec = SequenceSpec(truth, psf, m0=m0, n=n, noise_var=1.0, seed=seed,
                            psf_spread=0.5)
        obs, _ = generate_sequence(spec)
        sub = identify_subspace(obs, psf, SvdBackendChoice("randomized", seed=seed),
                                strategy="known", known_m=m0)
        mean_img = obs.matmul(np.full((obs.n, 1), 1.0 / obs.n)).reshape(sub.y_shape)
        u1 = sub.eigenvector_image(0)
        if u1.sum() < 0:
            u1 = -u1
        corr = float(np.corrcoef(u1.ravel(), mean_img.ravel())[0, 1])
        pgm.write_pgm(out / "fig_u01.pgm", u1)
        for i in range(1, min(m0 + 1, sub.rank)):
            pgm.write_signed_pgm(out / f"fig_u{i + 1:02d}.pgm",
                                 sub.eigenvector_image(i))
        path = out / "fig_eigenvectors.csv"
        write_csv(path, ["name", "value"],
                  [("corr_u1_mean_image", corr), ("m", m0), ("n", n)])
        written.append(path)

    if "ascent" in which:
        size, n = (16, 300) if quick else (24, 1000)
        truth = ground_truth_image((size, size), kind="shapes", seed=seed)
        spec = SequenceSpec(truth, (3, 3), m0=9, n=n, noise_var=0.1, seed=seed,
                            psf_spread=0.5)
        obs, _ = generate_sequence(spec)
        sub = identify_subspace(obs, (3, 3), SvdBackendChoice("randomized", seed=seed),
                                strategy="known", known_m=9)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(0xA5C, seed)))
        x0 = rng.uniform(0, 255, truth.shape)
        state = mle.gradient_ascent(x0, sub, (3, 3), tau=1.0,
                                    max_iter=500 if quick else 20_000,
                                    x_true=truth)
        path = out / "fig_ascent.csv"
        mle.export_history(state, path)
        written.append(path)

    if "inflation" in which:
        truth = ground_truth_image((32, 32), kind="uniform", seed=seed)
        rows = []
        for m0 in (5, 10):
            spec = SequenceSpec(truth, (5, 5), m0=m0, n=400, noise_var=0.0,
                                seed=seed, psf_spread=0.05)
            obs, _ = generate_sequence(spec)
            sub = identify_subspace(obs, (5, 5), SvdBackendChoice("dense", rank=25))
            for k in range(1, 6):
                inflated, new_psf = inflate(sub, (k, k), psf_shape=(5, 5))
                rows.append([m0, k, new_psf[0] * new_psf[1], inflated.m])
        path = out / "fig_inflation.csv"
        write_csv(path, ["m0", "d_size", "psf_size", "m"], rows)
        written.append(path)

    unknown = set(which) - {"spectrum", "misalignment", "eigenvectors", "ascent",
                            "inflation"}
    if unknown:
        raise ConfigError(f"unknown figure selection: {sorted(unknown)}")
    return written


# --------------------------------------------------------------------- main

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mfbd",
        description="Multi-frame blind deconvolution without filter estimation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--preset", choices=sorted(PRESETS), default=None)
        p.add_argument("--config", type=Path, default=None,
                       help="key = value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config field")

    g = sub.add_parser("generate", help="synthesize a dataset file")
    add_config_args(g)
    g.add_argument("--out", type=Path, required=True)

    r = sub.add_parser("run", help="run the recovery pipeline on a dataset")
    add_config_args(r)
    r.add_argument("--dataset", type=Path, required=True)
    r.add_argument("--out", type=Path, required=True)

    b = sub.add_parser("bench-svd", help="time the SVD backends on a size grid")
    b.add_argument("--out", type=Path, required=True)
    b.add_argument("--n", default="500,4000", help="comma-separated n values")
    b.add_argument("--y-sizes", default="100,1000,10000")
    b.add_argument("--backends", default="randomized,single_pass,dense")
    b.add_argument("--rank", type=int, default=25)
    b.add_argument("--budget", type=int, default=1 << 30,
                   help="dense backend memory budget in bytes")
    b.add_argument("--seed", type=int, default=0)

    f = sub.add_parser("figures", help="emit replication artifacts")
    f.add_argument("--out", type=Path, required=True)
    f.add_argument("--which", default="",
                   help="comma list: spectrum,misalignment,eigenvectors,ascent,inflation")
    f.add_argument("--quick", action="store_true", help="desk-scale sizes")
    f.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            cfg = resolve_config(args.preset, args.config, args.overrides)
            path = cmd_generate(cfg, args.out)
            print(f"wrote {path}")
        elif args.command == "run":
            cfg = resolve_config(args.preset, args.config, args.overrides)
            result = cmd_run(cfg, args.dataset, args.out)
            if "ni_rms" in result:
                print(f"ni_rms = {result['ni_rms']:.4f}")
            print(f"artifacts in {args.out}")
        elif args.command == "bench-svd":
            path = cmd_bench_svd(
                args.out, ns=tuple(int(v) for v in args.n.split(",")),
                y_sizes=tuple(int(v) for v in args.y_sizes.split(",")),
                backends=tuple(args.backends.split(",")), rank=args.rank,
                dense_budget=args.budget, seed=args.seed)
            print(f"wrote {path}")
        elif args.command == "figures":
            which = tuple(w for w in args.which.split(",") if w)
            written = cmd_figures(args.out, which=which, quick=args.quick,
                                  seed=args.seed)
            for path in written:
                print(f"wrote {path}")
    except (ConfigError, MemoryBudgetError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, RankDeficiencyError, MetricError, DimensionError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
