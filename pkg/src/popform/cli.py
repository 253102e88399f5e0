"""Command-line interface: ``popform <command> [options]``.

Commands: simulate, h1, fit, threshold, novelty, posterior, sweep, run.
Exit codes: 0 success, 2 input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, io, novelty, omgp
from . import linalg as la
from . import pipeline as pl
from .config import ExperimentConfig
from .gp import Bounds
from .spectral import SpectralConfig, coherence, h1_estimate

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
MANIFEST = "manifest.json"


class Run:
    """Collects written files and stage timings, then writes the manifest."""

    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.stages = []

    def stage(self, name: str):
        return _Stage(self, name)

    def write_manifest(self):
        path = self.out / MANIFEST
        previous = {}
        if path.exists():
            try:
                previous = {s["name"]: s for s in json.loads(path.read_text()).get("stages", [])}
            except (ValueError, KeyError, TypeError):
                previous = {}
        for s in self.stages:
            previous[s["name"]] = s
        io.write_json(path, {
            "tool": "popform",
            "version": __version__,
            "config_hash": self.cfg.hash(),
            "config": self.cfg.to_dict(),
            "stages": [previous[k] for k in sorted(previous)],
        })


class _Stage:
    def __init__(self, run: Run, name: str):
        self.run, self.name, self.files = run, name, []

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def add(self, path: Path) -> Path:
        self.files.append(str(Path(path).relative_to(self.run.out)))
        return path

    def __exit__(self, exc_type, *_):
        if exc_type is None:
            self.run.stages.append({"name": self.name, "files": sorted(self.files),
                                    "wall_time_s": round(time.perf_counter() - self.t0, 3),
                                    "config_hash": self.run.cfg.hash(), "seed": self.run.cfg.seed})
        return False


# ---------------------------------------------------------------- helpers


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(seed=args.seed, output_dir=args.out)


def _bounds(cfg: ExperimentConfig, path) -> Bounds:
    if path is None:
        return cfg.gp.box
    import yaml
    try:
        d = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise io.InputError(f"{path}: cannot read ({exc.strerror or exc})") from exc
    return Bounds.from_dict({**cfg.gp.bounds, **(d or {})})


def _read_frfs(paths) -> list:
    return [io.read_frf_csv(p) for p in paths]


def _form(args) -> novelty.FormPair:
    real, band_r, grid_r = io.read_omgp_model(args.real_model)
    imag, band_i, grid_i = io.read_omgp_model(args.imag_model)
    if real.part != "real" or imag.part != "imaginary":
        raise io.InputError("--real-model/--imag-model must hold real and imaginary OMGPs")
    band = band_r or band_i
    if band is None:
        x = np.concatenate([real.training.x, imag.training.x])
        band = (float(x.min()), float(x.max()))
    if band_i is not None and band_r is not None and tuple(band_i) != tuple(band_r):
        raise io.InputError("real and imaginary models were fitted on different bands")
    return novelty.FormPair(real, imag, band, grid_r if grid_r is not None else grid_i)


def _threshold(args, cfg) -> float:
    if args.threshold is not None:
        return float(args.threshold)
    if args.threshold_file:
        d = io.read_json(args.threshold_file)
        if "threshold" not in d:
            raise io.InputError(f"{args.threshold_file}: no 'threshold' entry")
        return float(d["threshold"])
    raise io.InputError("give --threshold or --threshold-file")


def _replicate(frfs, copies, noise, seed) -> list:
    if copies <= 0:
        return list(frfs)
    return pl.normal_replicas(frfs, copies, noise, seed)


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: ExperimentConfig, run: Run, args=None):
    with run.stage("simulate") as st:
        pop = cfg.population.build(cfg.grid, cfg.stage_seed("population"))
        for j, (model, frf) in enumerate(pop):
            st.add(io.write_frf_csv(run.out / f"member_{j:02d}.csv", frf))
            st.add(io.write_modal_json(run.out / f"member_{j:02d}.json", model))
    return pop


def cmd_h1(cfg: ExperimentConfig, run: Run, args):
    s = cfg.spectral
    spec = SpectralConfig(args.block_size or s.block_size, args.n_blocks or s.n_blocks,
                          args.window or s.window,
                          s.overlap_fraction if args.overlap is None else args.overlap)
    force = io.read_timeseries_csv(args.force, "force")
    response = io.read_timeseries_csv(args.response, "response")
    with run.stage("h1") as st:
        frf = h1_estimate(force, response, spec)
        coh = coherence(force, response, spec)
        st.add(io.write_frf_csv(run.out / "frf.csv", frf))
        st.add(io.write_csv(run.out / "coherence.csv", ("freq_hz", "coherence"), zip(frf.frequencies, coh)))


def _report_dict(r: pl.FitReport) -> dict:
    return {"part": r.part, "nmse": r.nmse, "msd": r.msd, "n_test": r.n_test, "objective": r.objective}


def cmd_fit(cfg: ExperimentConfig, run: Run, args):
    frfs = _read_frfs(args.data)
    if not frfs:
        raise io.InputError("fit needs at least one --data file")
    bounds = _bounds(cfg, args.bounds_file)
    t = cfg.training
    sign = args.residue_sign
    data = pl.replicate_population(frfs, t.n_copies, t.noise_fraction, cfg.stage_seed("replicate"))
    report = {"mode": args.mode, "seed": cfg.seed, "n_members": len(frfs)}
    with run.stage(f"fit-{args.mode}") as st:
        if args.mode == "supervised-mixture":
            splits = pl.member_splits(data, t.mixture_points, cfg.stage_seed("split-mixture"))
            for part, tag in (("real", "real"), ("imaginary", "imag")):
                models, rep = pl.fit_supervised_mixture(data, splits, part, bounds, sign, args.restarts or
                                                        cfg.gp.restarts, cfg.stage_seed("fit-gp"),
                                                        cfg.gp.method, args.jobs)
                for j, m in enumerate(models):
                    st.add(io.write_json(run.out / f"gp_member_{j:02d}_{tag}.json", io.gp_model_to_dict(m)))
                report[tag] = _report_dict(rep)
                report[tag]["converged"] = all(m.converged for m in models)
        elif args.mode == "single-gp":
            split = pl.pooled_split(data, t.pooled_points, cfg.stage_seed("split-pooled"))
            for part, tag in (("real", "real"), ("imaginary", "imag")):
                model, rep = pl.fit_single_gp(data, split, part, bounds, sign, args.restarts or cfg.gp.restarts,
                                              cfg.stage_seed("fit-gp"), cfg.gp.method, args.jobs)
                st.add(io.write_json(run.out / f"gp_single_{tag}.json", io.gp_model_to_dict(model)))
                report[tag] = _report_dict(rep)
                report[tag]["converged"] = model.converged
        else:
            _fit_omgp(cfg, run, args, st, data, bounds, report)
        st.add(io.write_json(run.out / f"fit_report_{args.mode}.json", report))
    return report


def _fit_omgp(cfg, run, args, st, data, bounds, report):
    o, t = cfg.omgp, cfg.training
    k = args.components or o.k
    restarts = args.restarts or o.restarts
    split = pl.pooled_split(data, t.omgp_points, cfg.stage_seed("split-omgp"))
    kwargs = dict(o.em_kwargs(), seeds_per_restart=o.seeds_per_restart)
    seed = cfg.stage_seed("fit-omgp")
    models = {}
    parts = ("real", "imaginary") if args.part == "both" else (args.part,)
    for part in parts:
        ts = pl.training_set(data, split.train, part, args.residue_sign)
        init, init_sigma = None, None
        if part == "imaginary":
            source = models.get("real")
            if source is None and args.init_from:
                source, _, _ = io.read_omgp_model(args.init_from)
            if source is not None:
                init = tuple(replace(c, part="imaginary") for c in source.components)
                ratio = np.max(np.abs(ts.y)) / np.max(np.abs(source.training.y))
                init_sigma = float(np.clip(source.shared_noise_std * ratio, *bounds.noise_std))
        elif args.init_from:
            source, _, _ = io.read_omgp_model(args.init_from)
            init = tuple(replace(c, part="real") for c in source.components)
            init_sigma = source.shared_noise_std
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            model = omgp.fit(ts, k, bounds, restarts=restarts, rng_seed=seed + (part == "imaginary"),
                             init=init, init_noise_std=init_sigma, jobs=args.jobs, **kwargs)
        models[part] = model
        tag = "real" if part == "real" else "imag"
        st.add(io.write_json(run.out / f"omgp_{tag}.json", io.omgp_model_to_dict(model, cfg.band, cfg.grid)))
        rep = _report_dict(pl.omgp_report(model, data, split.test, part))
        rep.update({"k": k, "final_lbc": model.bound_trace[-1], "bound_trace": list(model.bound_trace),
                    "restart_bounds": list(model.restart_bounds), "converged": model.converged,
                    "warnings": [str(w.message) for w in caught]})
        report[tag] = rep


def cmd_threshold(cfg: ExperimentConfig, run: Run, args):
    form = _form(args)
    n = cfg.novelty
    copies = n.normal_copies if args.copies is None else args.copies
    records = _replicate(_read_frfs(args.normal), copies, cfg.training.noise_fraction,
                         cfg.stage_seed("normal-replicas"))
    if not records:
        raise io.InputError("threshold needs at least one --normal file")
    with run.stage("threshold") as st:
        scores = np.array([novelty.score_parts(form, r) for r in records])
        total = scores.sum(axis=1)
        rows = ((i, s[0], s[1], s[0] + s[1]) for i, s in enumerate(scores))
        st.add(io.write_csv(run.out / "normal_scores.csv", ("record", "score_real", "score_imag", "score_total"),
                            rows))
        report = novelty.threshold_report(total, n.threshold_config(cfg.stage_seed("threshold")))
        report.update({"normal_files": [str(p) for p in args.normal], "copies_per_file": copies,
                       "seed": cfg.seed})
        st.add(io.write_json(run.out / "threshold.json", report))
    return report


def cmd_novelty(cfg: ExperimentConfig, run: Run, args):
    form = _form(args)
    threshold = _threshold(args, cfg)
    tests = [(str(p), io.read_frf_csv(p)) for p in (args.test or [])]
    with run.stage("novelty") as st:
        rows = []
        for name, frf in tests:
            v = novelty.verdict(form, frf, threshold)
            rows.append((name, v.per_part[0], v.per_part[1], v.score, v.threshold, int(v.outlying)))
        st.add(io.write_csv(run.out / "verdicts.csv",
                            ("file", "score_real", "score_imag", "score_total", "threshold", "outlying"), rows))
    return rows


def posterior_tables(form: novelty.FormPair, grid, n_samples: int, seed: int):
    """Per-component predictive columns and the sampled magnitude envelope."""
    post_re = omgp.predict(form.real_model, grid)
    post_im = omgp.predict(form.imag_model, grid)
    k = post_re.means.shape[0]
    if post_im.means.shape[0] != k:
        raise ValueError("real and imaginary forms have different numbers of components")
    header = ["freq_hz"]
    cols = [grid]
    for tag, post in (("real", post_re), ("imag", post_im)):
        for j in range(k):
            header += [f"{tag}_mean_{j}", f"{tag}_var_{j}"]
            cols += [post.means[j], np.clip(np.diag(post.covariances[j]), 0.0, None)]
    posterior = (header, list(zip(*cols)))
    rng = np.random.default_rng(seed)
    env_rows = []
    for j in range(k):
        draws = []
        for post in (post_re, post_im):
            cov = post.covariances[j]
            L, _ = la.jittered_cholesky(cov, max(float(np.max(np.diag(cov))), 1e-300))
            draws.append(post.means[j] + rng.standard_normal((n_samples, grid.size)) @ L.T)
        mag = np.hypot(draws[0], draws[1])
        for i, f in enumerate(grid):
            env_rows.append((j, f, mag[:, i].mean(), mag[:, i].min(), mag[:, i].max()))
    envelope = (("component", "freq_hz", "mean", "min", "max"), env_rows)
    return posterior, envelope


def cmd_posterior(cfg: ExperimentConfig, run: Run, args):
    form = _form(args)
    if args.grid:
        f_lo, f_hi, step = args.grid
        if f_lo < form.band[0] - 1e-9 or f_hi > form.band[1] + 1e-9:
            raise io.InputError(f"grid [{f_lo}, {f_hi}] lies outside the band {form.band}")
        grid = f_lo + step * np.arange(int(np.floor((f_hi - f_lo) / step + 1e-9)) + 1)
    else:
        grid = form.grid
    n = args.n_samples or cfg.novelty.posterior_samples
    with run.stage("posterior") as st:
        (h1, r1), (h2, r2) = posterior_tables(form, grid, n, cfg.stage_seed("posterior"))
        st.add(io.write_csv(run.out / "posterior.csv", h1, r1))
        st.add(io.write_csv(run.out / "envelope.csv", h2, r2))


def cmd_sweep(cfg: ExperimentConfig, run: Run, args):
    form = _form(args)
    models = [io.read_modal_json(p) for p in args.members]
    threshold = None
    if args.threshold is not None or args.threshold_file:
        threshold = _threshold(args, cfg)
    n = cfg.novelty
    reductions = args.reductions if args.reductions else n.reductions
    replicas = args.replicas or n.sweep_replicas
    with run.stage("sweep") as st:
        table = novelty.damage_sweep(form, models, reductions, replicas, cfg.training.noise_fraction,
                                     cfg.stage_seed("sweep"), threshold)
        st.add(io.write_csv(run.out / "sweep.csv", novelty.SweepTable.HEADER, table.rows()))
    return table


def cmd_run(cfg: ExperimentConfig, run: Run, args):
    """Whole protocol: simulate, fit the form, threshold, sweep and posterior."""
    cmd_simulate(cfg, run)
    members = sorted(run.out.glob("member_*.csv"))
    fit_args = argparse.Namespace(mode="omgp", data=members, bounds_file=args.bounds_file, restarts=args.restarts,
                                  components=args.components, part="both", init_from=None,
                                  residue_sign=args.residue_sign, jobs=args.jobs)
    cmd_fit(cfg, run, fit_args)
    form_args = dict(real_model=run.out / "omgp_real.json", imag_model=run.out / "omgp_imag.json")
    cmd_threshold(cfg, run, argparse.Namespace(**form_args, normal=members, copies=None))
    cmd_sweep(cfg, run, argparse.Namespace(**form_args, members=sorted(run.out.glob("member_*.json")),
                                           threshold=None, threshold_file=run.out / "threshold.json",
                                           reductions=None, replicas=None))
    cmd_posterior(cfg, run, argparse.Namespace(**form_args, grid=None, n_samples=None))


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON experiment config")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for restarts")
    common.add_argument("--out", help="output directory (overrides the config)")

    form = argparse.ArgumentParser(add_help=False)
    form.add_argument("--real-model", required=True, help="real-part OMGP JSON")
    form.add_argument("--imag-model", required=True, help="imaginary-part OMGP JSON")

    thr = argparse.ArgumentParser(add_help=False)
    thr.add_argument("--threshold", type=float, help="novelty threshold value")
    thr.add_argument("--threshold-file", help="threshold JSON written by the threshold command")

    fitting = argparse.ArgumentParser(add_help=False)
    fitting.add_argument("--bounds-file", help="YAML/JSON with hyperparameter bounds")
    fitting.add_argument("--restarts", type=int, help="random restarts")
    fitting.add_argument("--components", type=int, help="number of OMGP components K")
    fitting.add_argument("--residue-sign", type=int, choices=(-1, 1), default=1,
                         help="known sign of the resonance (+1 or -1)")

    p = argparse.ArgumentParser(prog="popform", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"popform {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="write member FRF CSVs and modal JSONs")

    h = sub.add_parser("h1", parents=[common], help="H1 FRF and coherence from time histories")
    h.add_argument("--force", required=True, help="force CSV (t_s,value)")
    h.add_argument("--response", required=True, help="response CSV (t_s,value)")
    h.add_argument("--block-size", type=int)
    h.add_argument("--n-blocks", type=int)
    h.add_argument("--window", choices=("hanning", "rectangular"))
    h.add_argument("--overlap", type=float)

    f = sub.add_parser("fit", parents=[common, fitting], help="fit supervised mixture, single GP or OMGP")
    f.add_argument("--mode", choices=("supervised-mixture", "single-gp", "omgp"), default="omgp")
    f.add_argument("--data", nargs="+", required=True, help="one FRF CSV per structure")
    f.add_argument("--part", choices=("both", "real", "imaginary"), default="both")
    f.add_argument("--init-from", help="OMGP JSON whose components initialise this fit")

    t = sub.add_parser("threshold", parents=[common, form], help="bootstrap novelty threshold")
    t.add_argument("--normal", nargs="+", required=True, help="normal-condition FRF CSVs")
    t.add_argument("--copies", type=int, help="noisy copies per file (0 uses the files as they are)")

    n = sub.add_parser("novelty", parents=[common, form, thr], help="score test FRFs")
    n.add_argument("--test", nargs="*", default=[], help="test FRF CSVs")

    q = sub.add_parser("posterior", parents=[common, form], help="posterior and magnitude envelope CSVs")
    q.add_argument("--grid", type=float, nargs=3, metavar=("F_LO", "F_HI", "STEP"))
    q.add_argument("--n-samples", type=int)

    s = sub.add_parser("sweep", parents=[common, form, thr], help="damage sweep scores")
    s.add_argument("--members", nargs="+", required=True, help="member modal-model JSONs")
    s.add_argument("--reductions", type=float, nargs="+", help="fractional frequency reductions")
    s.add_argument("--replicas", type=int)

    sub.add_parser("run", parents=[common, fitting], help="simulate, fit, threshold, sweep and posterior")
    return p


COMMANDS = {
    "simulate": cmd_simulate, "h1": cmd_h1, "fit": cmd_fit, "threshold": cmd_threshold,
    "novelty": cmd_novelty, "posterior": cmd_posterior, "sweep": cmd_sweep, "run": cmd_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(cfg, out)
        COMMANDS[args.command](cfg, run, args)
        run.write_manifest()
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"popform: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.InputError, ValueError, OSError, KeyError) as exc:
        print(f"popform: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
