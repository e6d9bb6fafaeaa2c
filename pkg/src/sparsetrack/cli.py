"""Command-line driver: construct, hold, rebalance, diagnose, template."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from ._random import stage_seed
from .data import WindowSpec, center_design, load_panel, slice_window
from .diagnostics import acf, evaluate_hold, sentinel_ess, te_raw
from .exceptions import ConfigError, DataError, NumericalError, SparseTrackError
from .fista import FistaConfig, fista
from .mala import MalaConfig, chain_summaries, load_chain, mala_run
from .model import build_preconditioner, build_spec
from .noise import estimate_sigma2_mad, theta0_init
from .rebalance import (
    DEFAULT_C_GRID,
    GateConfig,
    build_delta_design,
    gate_trades,
    grid_search_c,
    pick_c_star,
    write_grid,
)
from .sapg import SapgConfig, run_sapg
from .selection import (
    build_portfolio_suite,
    read_portfolios,
    select_from_chain,
    write_portfolios,
    write_selection_report,
)

log = logging.getLogger("sparsetrack")

EXIT_OK, EXIT_DATA, EXIT_NUMERIC, EXIT_CONFIG = 0, 2, 3, 4
WINDOW_ORDER = ("FIT-1", "HOLD-1", "FIT-2", "HOLD-2", "FIT-3")
FLOAT_FMT = "%.17g"


class StageError(Exception):
    def __init__(self, stage: str, exc: Exception):
        self.stage = stage
        self.exc = exc
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")


@contextlib.contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


# -- configuration ---------------------------------------------------------


def _section(cls, values: dict, drop=("seed", "chain_path")):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**{k: v for k, v in values.items() if k not in drop})


def _dump(obj, drop=("seed", "chain_path")):
    return {k: v for k, v in asdict(obj).items() if k not in drop}


@dataclass
class RunConfig:
    data: dict = field(default_factory=lambda: {
        "csv_path": "prices.csv", "index_column": "^GSPC", "mode": "prices",
        "date_column": "date"})
    windows: list = field(default_factory=list)
    model: dict = field(default_factory=lambda: {
        "tau_c": 2e-3, "alpha_eps": 1e-8, "budget_diag": "p", "rebalance_tau_c": None})
    sapg: SapgConfig = field(default_factory=SapgConfig)
    fista: FistaConfig = field(default_factory=FistaConfig)
    mala: MalaConfig = field(default_factory=lambda: MalaConfig(thin=1))
    selection: dict = field(default_factory=lambda: {
        "k": 2.5, "pi_star": 0.65, "long_only": True})
    rebalance: dict = field(default_factory=lambda: {
        "gate": asdict(GateConfig()),
        "c_grid": list(DEFAULT_C_GRID),
        "sapg": {"n_iter": 15000, "n_burn": 4000},
        "fista": {"max_iter": 4000},
        "mala": {"n_samples": 250000, "burn_in": 50000, "thin": 6},
    })
    hold: dict = field(default_factory=lambda: {"window": 20})
    stages: dict = field(default_factory=lambda: {
        "fit": "FIT-1", "hold": "HOLD-1", "rebalance": "FIT-2"})
    output_dir: str = "out"
    seed: int = 0

    # ---- parsing
    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base = cls()
        try:
            cfg = cls(
                data={**base.data, **d.get("data", {})},
                windows=[WindowSpec(**w) for w in d.get("windows", [])],
                model={**base.model, **d.get("model", {})},
                sapg=_section(SapgConfig, {**_dump(base.sapg), **d.get("sapg", {})}),
                fista=_section(FistaConfig, {**asdict(base.fista), **d.get("fista", {})}),
                mala=_section(MalaConfig, {**_dump(base.mala), **d.get("mala", {})}),
                selection={**base.selection, **d.get("selection", {})},
                rebalance=_merge_rebalance(base.rebalance, d.get("rebalance", {})),
                hold={**base.hold, **d.get("hold", {})},
                stages={**base.stages, **d.get("stages", {})},
                output_dir=str(d.get("output_dir", base.output_dir)),
                seed=int(d.get("seed", base.seed)),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, DataError) as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {
            "data": self.data,
            "windows": [asdict(w) for w in self.windows],
            "model": self.model,
            "sapg": _dump(self.sapg),
            "fista": asdict(self.fista),
            "mala": _dump(self.mala),
            "selection": self.selection,
            "rebalance": self.rebalance,
            "hold": self.hold,
            "stages": self.stages,
            "output_dir": self.output_dir,
            "seed": self.seed,
        }

    def validate(self):
        labels = [w.label for w in self.windows]
        if len(set(labels)) != len(labels):
            raise ConfigError("window labels must be unique")
        ordered = [w for lab in WINDOW_ORDER for w in self.windows if w.label == lab]
        for a, b in zip(ordered, ordered[1:]):
            if b.end_date < a.end_date:
                raise ConfigError(f"window {b.label} ends before {a.label}")
        if not self.rebalance.get("c_grid"):
            raise ConfigError("rebalance.c_grid is empty")
        GateConfig(**self.rebalance["gate"])
        if self.data.get("mode") not in ("prices", "returns"):
            raise ConfigError("data.mode must be 'prices' or 'returns'")

    def window(self, label: str) -> WindowSpec:
        for w in self.windows:
            if w.label == label:
                return w
        raise ConfigError(f"window {label!r} not defined in config")

    @property
    def rebalance_tau_c(self) -> float:
        v = self.model.get("rebalance_tau_c")
        return math.inf if v is None else float(v)


def _merge_rebalance(base: dict, over: dict) -> dict:
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for key, val in over.items():
        if key not in out:
            raise ConfigError(f"unknown rebalance key {key!r}")
        if isinstance(out[key], dict):
            out[key].update(val)
        else:
            out[key] = list(val) if key == "c_grid" else val
    return out


# -- output helpers --------------------------------------------------------


def write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def write_weights(path: Path, tickers, w, column="weight"):
    pd.DataFrame({"ticker": list(tickers), column: np.asarray(w)}).to_csv(
        path, index=False, float_format=FLOAT_FMT)


def read_weights(path, tickers, column: str | None = None) -> np.ndarray:
    frame = pd.read_csv(path, float_precision="round_trip")
    if "ticker" not in frame.columns:
        raise DataError(f"{path} has no 'ticker' column")
    cols = [c for c in frame.columns if c != "ticker"]
    if column is None:
        column = "weight" if "weight" in cols else cols[0]
    if column not in cols:
        raise DataError(f"{path} has no column {column!r}")
    s = frame.set_index(frame["ticker"].astype(str))[column]
    missing = [t for t in tickers if t not in s.index]
    if missing:
        raise DataError(f"weights file lacks tickers {missing[:5]}")
    return s.reindex(list(tickers)).to_numpy(dtype=float)


def _stage_seed(cfg: RunConfig, name: str):
    return stage_seed(cfg.seed, name)


def _panel(cfg: RunConfig):
    d = cfg.data
    with stage("data_ingest"):
        return load_panel(d["csv_path"], d.get("mode", "prices"), d.get("index_column", "^GSPC"),
                          d.get("date_column", "date"))


# -- commands --------------------------------------------------------------


def cmd_construct(cfg: RunConfig, out: Path) -> dict:
    panel = _panel(cfg)
    with stage("data_ingest"):
        win = cfg.window(cfg.stages["fit"])
        y, R = slice_window(panel, win)
        design = center_design(y, R, cfg.model["alpha_eps"], win)
    with stage("noise_estim"):
        noise = estimate_sigma2_mad(design)
        init = theta0_init(design, w_ols=noise.w_ols)
        spec0 = build_spec(design, noise.sigma2, cfg.model["tau_c"], init.theta0)
    write_json(out / "sigma2.json", {
        "sigma2": noise.sigma2, "sigma_mad": noise.sigma_mad, "tau_c": spec0.tau_c,
        "Lambda": spec0.Lambda, "L_f": spec0.L_f, "lambda_my": spec0.lambda_my,
        "theta0": init.theta0, "theta_min": init.theta_min, "theta_max": init.theta_max})
    with stage("sapg"):
        sapg_cfg = SapgConfig(**{**_dump(cfg.sapg), "seed": _stage_seed(cfg, "sapg")})
        res = run_sapg(design, spec0, init, sapg_cfg)
        res.to_csv(out / "sapg_trace.csv")
    write_json(out / "theta_star.json", {
        "theta_star": res.theta_star, "clipped_fraction": res.clipped_fraction,
        "myula_step": res.step, "n_iter": sapg_cfg.n_iter, "n_burn": sapg_cfg.n_burn})
    spec = spec0.with_theta(res.theta_star)
    with stage("map_solver"):
        sol = fista(design, spec, "weighted_l1", cfg.fista)
        sol.to_csv(out / "map_objective.csv")
        write_weights(out / "map_weights.csv", panel.tickers, sol.w, "w_map")
    with stage("mala_sampler"):
        precond = build_preconditioner(design, spec, cfg.model.get("budget_diag", "p"))
        mcfg = MalaConfig(**{**_dump(cfg.mala), "seed": _stage_seed(cfg, "mala"),
                             "chain_path": str(out / "chain.sptc")})
        chain = mala_run(design, spec, precond, mcfg, sol.w)
    with stage("selection_portfolio"):
        sel = cfg.selection
        sd, _ = chain_summaries(chain)
        report = select_from_chain(sol.w, chain, sel["k"], sel["pi_star"], sel["long_only"], sd)
        write_selection_report(out / "selection_report.csv", report, sol.w, panel.tickers)
        suite = build_portfolio_suite(design, spec, sol.w, report, cfg.fista)
        write_portfolios(out / "portfolios.csv", suite, panel.tickers)
    y_raw, R_raw = design.raw()
    rows = [{"portfolio": "map", "n_names": int(np.count_nonzero(sol.w)),
             "te_fit": te_raw(y_raw, R_raw, sol.w, design.y_mu, design.R_mu),
             "budget_sum": float(sol.w.sum()), "diagnostic_only": False}]
    rows += [{"portfolio": pf.kind, "n_names": int(np.count_nonzero(pf.weights)), "te_fit": pf.te,
              "budget_sum": pf.budget_sum, "diagnostic_only": pf.diagnostic_only}
             for pf in suite]
    pd.DataFrame(rows).to_csv(out / "fit_summary.csv", index=False, float_format=FLOAT_FMT)
    summary = {"sigma2": noise.sigma2, "theta0": init.theta0, "theta_star": res.theta_star,
               "accept_rate": chain.accept_rate, "step": chain.step_used,
               "n_selected": int(report.support.size), "mass_kept": report.mass_kept}
    write_json(out / "construct_summary.json", summary)
    return summary


def cmd_hold(cfg: RunConfig, out: Path, portfolio_file, window_label: str | None = None) -> dict:
    panel = _panel(cfg)
    with stage("diagnostics_eval"):
        win = cfg.window(window_label or cfg.stages["hold"])
        tickers, cols = read_portfolios(portfolio_file)
        if list(tickers) != list(panel.tickers):
            order = {t: i for i, t in enumerate(tickers)}
            missing = [t for t in panel.tickers if t not in order]
            if missing:
                raise DataError(f"portfolio file lacks tickers {missing[:5]}")
            cols = {k: v[[order[t] for t in panel.tickers]] for k, v in cols.items()}
        reports = evaluate_hold(panel, win, cols, cfg.hold.get("window", 20))
        summary = {}
        for rep in reports:
            rep.to_csv(out / f"hold_report_{rep.name}.csv")
            summary[rep.name] = {"te_rms": rep.te_rms, "n_days": len(rep.dates),
                                 "cum_index": float(rep.cum_index[-1]),
                                 "cum_portfolio": float(rep.cum_portfolio[-1])}
    write_json(out / f"hold_summary_{win.label}.json", summary)
    return summary


def cmd_rebalance(cfg: RunConfig, out: Path, w_old_file, column: str | None = None,
                  jobs: int = 1) -> dict:
    panel = _panel(cfg)
    rb = cfg.rebalance
    with stage("rebalance"):
        win = cfg.window(cfg.stages["rebalance"])
        y, R = slice_window(panel, win)
        w_old = read_weights(w_old_file, panel.tickers, column)
        if abs(w_old.sum() - 1.0) > 1e-8:
            raise DataError(f"w_old sums to {w_old.sum():.12g}, not 1")
        gate = GateConfig(**rb["gate"])
        design = build_delta_design(y, R, w_old, cfg.model["alpha_eps"], win)
        te_old = te_raw(y, R, w_old)
        sigma2_base = estimate_sigma2_mad(design).sigma2
        sapg_cfg = SapgConfig(**{**_dump(cfg.sapg), **rb["sapg"],
                                 "seed": _stage_seed(cfg, "rebalance_sapg")})
        fista_cfg = FistaConfig(**{**asdict(cfg.fista), **rb["fista"]})
        rows, dws = grid_search_c(design, rb["c_grid"], w_old, te_old, gate, sapg_cfg, fista_cfg,
                                  sigma2_base, cfg.rebalance_tau_c, jobs, return_dw=True)
        write_grid(out / "grid.csv", rows)
        best = pick_c_star(rows, te_old)
        row = rows[best]
        write_json(out / "locked_params.json", {
            "c_star": row.c, "sigma2_base": sigma2_base, "sigma2_final": row.sigma2_c,
            "kappa_final": row.kappa_c, "te_old": te_old, "te_fit2": row.te_fit2,
            "nnz_eff": row.nnz_eff, "score": row.score})
    with stage("mala_sampler"):
        spec = build_spec(design, row.sigma2_c, cfg.rebalance_tau_c, row.kappa_c, mode="delta")
        precond = build_preconditioner(design, spec)
        mcfg = MalaConfig(**{**_dump(cfg.mala), **rb["mala"],
                             "seed": _stage_seed(cfg, "rebalance_mala"),
                             "chain_path": str(out / "delta_chain.sptc")})
        chain = mala_run(design, spec, precond, mcfg, dws[best])
    with stage("rebalance"):
        decision = gate_trades(dws[best], chain, w_old, gate, panel.tickers)
        decision.to_frame().to_csv(out / "decision.csv", index=False, float_format=FLOAT_FMT)
        write_weights(out / "w_new.csv", panel.tickers, decision.w_new)
    summary = {"c_star": row.c, "kappa": row.kappa_c, "acted": decision.acted,
               "n_rule": int(decision.S_rule.size), "n_tau": int(decision.S_tau.size),
               "n_pi": int(decision.S_pi.size), "accept_rate": chain.accept_rate}
    write_json(out / "rebalance_summary.json", summary)
    return summary


def cmd_diagnose(cfg: RunConfig | None, out: Path, chain_file, map_file=None,
                 n_sentinels: int = 10, max_lag: int = 200) -> dict:
    with stage("diagnostics_eval"):
        chain = load_chain(chain_file)
        p = chain.draws.shape[1]
        design = None
        if map_file is not None:
            frame = pd.read_csv(map_file, float_precision="round_trip")
            w_map = frame.drop(columns=["ticker"]).iloc[:, 0].to_numpy(dtype=float)
        else:
            w_map = np.asarray(chain_summaries(chain)[1])
        if cfg is not None and chain.mode == "weights":
            panel = _panel(cfg)
            win = cfg.window(cfg.stages["fit"])
            y, R = slice_window(panel, win)
            if R.shape[1] == p:
                design = center_design(y, R, cfg.model["alpha_eps"], win)
        rep = sentinel_ess(chain, w_map, n_sentinels, design)
        acfs = {f"w{j}": acf(np.asarray(chain.draws[:, j]), max_lag)
                for j in rep.sentinel_indices}
        if rep.te_series is not None and np.std(rep.te_series) > 0:
            acfs["te"] = acf(rep.te_series, max_lag)
        frame = pd.DataFrame(acfs)
        frame.insert(0, "lag", np.arange(len(frame)))
        frame.to_csv(out / "acf.csv", index=False, float_format=FLOAT_FMT)
    summary = {"ess_te": rep.ess_te, "ess_min_sentinels": rep.ess_min_sentinels,
               "sentinels": [int(j) for j in rep.sentinel_indices],
               "per_sentinel_ess": {str(k): v for k, v in rep.per_sentinel_ess.items()},
               "sd_te": rep.sd_te, "mcse_te": rep.mcse_te, "n_draws": chain.n_draws,
               "accept_rate": chain.accept_rate}
    write_json(out / "ess_report.json", summary)
    return summary


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--jobs", type=int, default=1, help="parallel rebalancing grid rows")
    common.add_argument("--output-dir", help="override the output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sparsetrack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("construct", parents=[common], help="fit, calibrate, sample, select")
    p = sub.add_parser("hold", parents=[common], help="evaluate portfolios on a hold window")
    p.add_argument("--portfolios", required=True, help="portfolios.csv from construct")
    p.add_argument("--window", help="hold window label")
    p = sub.add_parser("rebalance", parents=[common], help="grid, sample and gate a rebalance")
    p.add_argument("--w-old", required=True, help="CSV of held weights (ticker, weight)")
    p.add_argument("--column", help="weight column in the w-old file")
    p = sub.add_parser("diagnose", parents=[common], help="ESS/ACF report for a chain file")
    p.add_argument("--chain", required=True)
    p.add_argument("--map", help="CSV with the MAP weights (sentinel choice)")
    p.add_argument("--sentinels", type=int, default=10)
    p.add_argument("--max-lag", type=int, default=200)
    p = sub.add_parser("template", parents=[common], help="print the default configuration")
    p.add_argument("--out", help="write to this file instead of stdout")
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.output_dir:
        cfg.output_dir = args.output_dir
    return cfg


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "template":
            cfg = _load_config(args)
            if not cfg.windows:
                cfg.windows = [WindowSpec("FIT-1", "2017-01-03", "2018-12-31", 500),
                               WindowSpec("HOLD-1", "2019-01-02", "2019-07-03", 128)]
            text = json.dumps(cfg.to_dict(), indent=2) + "\n"
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        cfg = _load_config(args)
        if args.command != "diagnose" and not args.config:
            raise ConfigError("--config is required")
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "construct":
            summary = cmd_construct(cfg, out)
        elif args.command == "hold":
            summary = cmd_hold(cfg, out, args.portfolios, args.window)
        elif args.command == "rebalance":
            summary = cmd_rebalance(cfg, out, args.w_old, args.column, args.jobs)
        else:
            summary = cmd_diagnose(cfg if args.config else None, out, args.chain, args.map,
                                   args.sentinels, args.max_lag)
        print(json.dumps(summary, indent=2, default=_json_default))
        return EXIT_OK
    except (StageError, SparseTrackError, OSError) as err:
        exc = err.exc if isinstance(err, StageError) else err
        tag = f"[{err.stage}] " if isinstance(err, StageError) else ""
        print(f"error: {tag}{type(exc).__name__}: {exc}", file=sys.stderr)
        return _exit_code(exc)


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, OSError)):
        return EXIT_DATA
    if isinstance(exc, NumericalError):
        return EXIT_NUMERIC
    if isinstance(exc, (ValueError, FloatingPointError, np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    return 1


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
