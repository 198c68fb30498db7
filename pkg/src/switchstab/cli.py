"""Command-line front door: gen, synth, simulate, detect, analyze.

Exit codes: 0 ok; 2 assumption or informativity failure; 3 runtime
controller/analysis failure; 4 I/O or schema error. Every run is
reproducible from the emitted files: seeds are recorded in each manifest.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis as an
from .controller import ModeLibrary, Phase
from .data import (
    DataMatrices,
    MatchSet,
    load_manifest_data,
    pairwise_incompatible,
    prune_matches,
    read_manifest,
    write_manifest,
    write_trajectory_csv,
)
from .errors import (
    EmptyMatchSet,
    NoExcitationDirection,
    NotInformative,
    RecurrenceViolated,
    SwitchstabError,
    SynthesisInconclusive,
)
from .linalg import DEFAULT_TOL
from .lmi import GainCertificate, synth_gain, verify_uniform_decay
from .plant import (
    Adaptive,
    Precomputed,
    SwitchedPlant,
    gen_init_data,
    gen_modes,
    read_plant_json,
    write_plant_json,
)
from .simulate import RunLog, apply_events_json, read_runlog_csv, run_closed_loop, write_events_json, write_runlog_csv

EXIT_OK = 0
EXIT_ASSUMPTION = 2
EXIT_RUNTIME = 3
EXIT_IO = 4

_CONFIG_DEFAULTS = {
    "x0_scale": 1.0,
    "spectral_range": [0.8, 1.2],
    "seed_violation": False,
    "u_scale": 1.0,
}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    cfg = dict(_CONFIG_DEFAULTS)
    cfg.update(doc)
    required = ["n", "m", "p", "T_init", "lambda", "u_max", "signal", "horizon", "seed"]
    missing = [key for key in required if key not in cfg]
    if missing:
        raise ConfigError(f"config missing keys: {missing}")
    if not (isinstance(cfg["n"], int) and cfg["n"] >= 1):
        raise ConfigError("n must be a positive integer")
    if not (isinstance(cfg["m"], int) and cfg["m"] >= 1):
        raise ConfigError("m must be a positive integer")
    if not (isinstance(cfg["p"], int) and cfg["p"] >= 1):
        raise ConfigError("p must be a positive integer")
    if not (isinstance(cfg["T_init"], int) and cfg["T_init"] >= 1):
        raise ConfigError("T_init must be a positive integer")
    if not 0.0 < cfg["lambda"] < 1.0:
        raise ConfigError("lambda must lie in (0, 1)")
    if not cfg["u_max"] > 0:
        raise ConfigError("u_max must be positive")
    if not (isinstance(cfg["horizon"], int) and cfg["horizon"] >= 1):
        raise ConfigError("horizon must be a positive integer")
    sig = cfg["signal"]
    if sig.get("kind") == "adaptive":
        if not sig.get("mean_dwell", 0) >= 1:
            raise ConfigError("adaptive signal needs mean_dwell >= 1")
    elif sig.get("kind") == "precomputed":
        if not sig.get("schedule"):
            raise ConfigError("precomputed signal needs a schedule")
    else:
        raise ConfigError("signal.kind must be 'adaptive' or 'precomputed'")
    return cfg


def _signal_from_config(cfg: dict):
    sig = cfg["signal"]
    if sig["kind"] == "adaptive":
        return Adaptive(mean_dwell=float(sig["mean_dwell"]), seed=int(cfg["seed"]))
    return Precomputed(schedule=tuple((int(t), int(i)) for t, i in sig["schedule"]))


# ---------------------------------------------------------------------------
# gains files
# ---------------------------------------------------------------------------

def write_gains_json(path, certs: list[GainCertificate], seed=None) -> None:
    doc = {
        "lambda": certs[0].lam,
        "modes": [
            {"K": [list(map(float, row)) for row in c.K],
             "P": [list(map(float, row)) for row in c.P]}
            for c in certs
        ],
    }
    if seed is not None:
        doc["seed"] = seed
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_gains_json(path) -> list[GainCertificate]:
    doc = json.loads(Path(path).read_text())
    lam = float(doc["lambda"])
    return [
        GainCertificate(
            K=np.array(mode["K"], dtype=float),
            P=np.array(mode["P"], dtype=float),
            lam=lam,
        )
        for mode in doc["modes"]
    ]


# ---------------------------------------------------------------------------
# offline detection replay
# ---------------------------------------------------------------------------

def replay_detection(log: RunLog, init_data: list[DataMatrices],
                     seed_violation: bool = False, tol=DEFAULT_TOL) -> dict:
    """Re-derive the match-set timeline of a recorded run.

    Walks every detection phase in the log, rebuilds the online record the
    controller held (including the optional seeded violation transition),
    reruns the pruning, and reports per-step match sets and resolutions.
    """
    p = len(init_data)
    m = init_data[0].m
    states = log.states()
    timeline = []
    resolutions = []
    online = None
    matches = None
    for rec in log.steps:
        if rec.phase is not Phase.DETECT:
            online = None
            continue
        if online is None:
            if seed_violation and rec.t > 0:
                prev = log.steps[rec.t - 1]
                online = DataMatrices.from_initial_state(prev.x, m).append(prev.u, rec.x)
            else:
                online = DataMatrices.from_initial_state(rec.x, m)
            matches = MatchSet.full(p)
        online = online.append(rec.u, states[rec.t + 1])
        matches = prune_matches(matches, init_data, online, tol)
        resolved = matches.remaining[0] if len(matches) == 1 else None
        timeline.append({
            "t": rec.t,
            "matches": list(matches.remaining),
            "resolved": resolved,
        })
        if resolved is not None:
            resolutions.append({"t": rec.t, "mode": resolved})
            online = None
    return {"timeline": timeline, "resolutions": resolutions}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_IO
    seed = cfg["seed"] if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    modes = gen_modes(seed, cfg["n"], cfg["m"], cfg["p"],
                      spectral_range=tuple(cfg["spectral_range"]))
    init = [
        gen_init_data(mode, cfg["T_init"], seed=[seed, i],
                      x0_scale=cfg["x0_scale"], u_scale=cfg["u_scale"])
        for i, mode in enumerate(modes)
    ]
    plant = SwitchedPlant(modes=tuple(modes), signal=_signal_from_config(cfg))
    write_plant_json(out / "plant.json", plant, seed=seed)
    files = {}
    for i, data in enumerate(init):
        name = f"mode_{i}.csv"
        write_trajectory_csv(out / name, data)
        files[i] = name
    write_manifest(out / "manifest.json", files, seed=seed)

    ok = True
    informative = []
    for i, data in enumerate(init):
        try:
            synth_gain(data, cfg["lambda"])
            informative.append(True)
        except (NotInformative, SynthesisInconclusive):
            informative.append(False)
    if all(informative):
        print("assumption 1 (per-mode informativity): PASS")
    else:
        bad = [i for i, flag in enumerate(informative) if not flag]
        print(f"assumption 1 (per-mode informativity): FAIL modes {bad}")
        ok = False
    if pairwise_incompatible(init):
        print("assumption 2 (pairwise-incompatible records): PASS")
    else:
        print("assumption 2 (pairwise-incompatible records): FAIL")
        ok = False
    return EXIT_OK if ok else EXIT_ASSUMPTION


def cmd_synth(args) -> int:
    try:
        init = load_manifest_data(args.manifest)
        manifest_doc = json.loads(Path(args.manifest).read_text())
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"cannot read manifest: {exc}", file=sys.stderr)
        return EXIT_IO
    lam = args.lam
    certs = []
    for i, data in enumerate(init):
        try:
            cert = synth_gain(data, lam, margin=args.margin)
        except NotInformative as exc:
            print(f"mode {i} not informative: {exc}", file=sys.stderr)
            return EXIT_ASSUMPTION
        except SynthesisInconclusive as exc:
            print(f"mode {i} synthesis inconclusive: {exc}", file=sys.stderr)
            return EXIT_ASSUMPTION
        if not verify_uniform_decay(data, cert):
            print(f"mode {i} failed the sampled decay re-check", file=sys.stderr)
            return EXIT_ASSUMPTION
        certs.append(cert)
    write_gains_json(args.out, certs, seed=manifest_doc.get("seed"))
    print(f"synthesized {len(certs)} gains at decay {lam}")
    return EXIT_OK


def _runlog_paths(out: Path, seed: int):
    return out / f"runlog_{seed}.csv", out / f"events_{seed}.json"


def cmd_simulate(args) -> int:
    try:
        cfg = load_config(args.config)
        plant = read_plant_json(args.plant)
        certs = read_gains_json(args.gains)
        manifest_dir = Path(args.manifest)
        init = load_manifest_data(manifest_dir)
    except (OSError, json.JSONDecodeError, KeyError, ConfigError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    library = ModeLibrary(init_data=tuple(init), certs=tuple(certs))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    u_max = cfg["u_max"] if args.umax is None else args.umax
    seed_violation = bool(cfg["seed_violation"] or args.seed_violation)
    if args.seeds:
        lo, hi = args.seeds.split(":")
        seeds = range(int(lo), int(hi))
    else:
        seeds = [cfg["seed"] if args.seed is None else args.seed]
    code = EXIT_OK
    for seed in seeds:
        rng = np.random.default_rng([seed, 777])
        x0 = cfg["x0_scale"] * rng.standard_normal(cfg["n"])
        try:
            log = run_closed_loop(
                plant, library, x0, cfg["horizon"], seed=seed,
                seed_violation=seed_violation, u_max=u_max,
            )
        except (EmptyMatchSet, NoExcitationDirection) as exc:
            log = exc.partial_log
            print(f"seed {seed}: controller error {type(exc).__name__}", file=sys.stderr)
            code = EXIT_RUNTIME
        log_path, events_path = _runlog_paths(out, seed)
        write_runlog_csv(log_path, log)
        write_events_json(events_path, log)
    return code


def _load_log(args) -> RunLog:
    log = read_runlog_csv(args.log)
    events = Path(args.log).with_name(Path(args.log).name.replace("runlog", "events")).with_suffix(".json")
    if args.events:
        events = Path(args.events)
    if events.exists():
        apply_events_json(log, events)
    return log


def cmd_detect(args) -> int:
    try:
        log = _load_log(args)
        init = load_manifest_data(args.manifest)
    except (OSError, json.JSONDecodeError, KeyError, IndexError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    replay = replay_detection(log, init, seed_violation=log.seed_violation)
    Path(args.out).write_text(json.dumps(replay, indent=2) + "\n")
    mismatch = 0
    for row in replay["timeline"]:
        logged = log.steps[row["t"]].matches
        if logged is not None and tuple(row["matches"]) != tuple(logged):
            mismatch += 1
    if mismatch:
        print(f"replay disagrees with the recorded match sets at {mismatch} steps",
              file=sys.stderr)
        return EXIT_RUNTIME
    print(f"replayed {len(replay['timeline'])} detection steps, "
          f"{len(replay['resolutions'])} resolutions")
    return EXIT_OK


def _parse_grid(text: str | None, default):
    if not text:
        return default
    return tuple(float(v) for v in text.split(","))


def cmd_analyze(args) -> int:
    try:
        log = _load_log(args)
        certs = read_gains_json(args.gains)
        plant = read_plant_json(args.plant)
    except (OSError, json.JSONDecodeError, KeyError, IndexError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    u_max = log.u_max if args.umax is None else args.umax
    if not np.isfinite(u_max):
        print("u_max unknown: pass --umax or provide the events sidecar", file=sys.stderr)
        return EXIT_IO
    tau_grid = _parse_grid(args.tau_grid, an.DEFAULT_TAU_GRID)
    eta_grid = _parse_grid(args.eta_grid, an.DEFAULT_ETA_GRID)
    try:
        result = an.analyze_log(
            log, certs, plant.modes, u_max, tau_grid=tau_grid, eta_grid=eta_grid,
        )
    except RecurrenceViolated as exc:
        print(f"timer construction failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    an.write_analysis_report(out / "report.json", result, extra={"seed": log.seed})
    an.write_analysis_series(out / "series.csv", log, result)
    cond = result.condition
    print(f"condition lhs = {cond.lhs:.4f} ({'holds' if cond.holds else 'fails'}), "
          f"a = {cond.a:.4f}")
    print(f"certificate: {'ok' if result.wcert.ok else 'VIOLATED'}; "
          f"bound: {result.bound_ok}")
    return EXIT_OK if result.ok else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="switchstab",
        description="Data-driven detect/stabilize control of switched linear systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate plant + initialization records")
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen)

    p_synth = sub.add_parser("synth", help="synthesize per-mode gains")
    p_synth.add_argument("--manifest", required=True)
    p_synth.add_argument("--lambda", dest="lam", type=float, required=True)
    p_synth.add_argument("--margin", type=float, default=1e-6)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_sim = sub.add_parser("simulate", help="closed-loop runs")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--plant", required=True)
    p_sim.add_argument("--gains", required=True)
    p_sim.add_argument("--manifest", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--seeds", default=None, help="range a:b of run seeds")
    p_sim.add_argument("--umax", type=float, default=None)
    p_sim.add_argument("--seed-violation", action="store_true")
    p_sim.set_defaults(func=cmd_simulate)

    p_det = sub.add_parser("detect", help="offline detection replay on a log")
    p_det.add_argument("--log", required=True)
    p_det.add_argument("--events", default=None)
    p_det.add_argument("--manifest", required=True)
    p_det.add_argument("--out", required=True)
    p_det.set_defaults(func=cmd_detect)

    p_an = sub.add_parser("analyze", help="fit, certificate replay, bound audit")
    p_an.add_argument("--log", required=True)
    p_an.add_argument("--events", default=None)
    p_an.add_argument("--gains", required=True)
    p_an.add_argument("--plant", required=True)
    p_an.add_argument("--out", required=True)
    p_an.add_argument("--umax", type=float, default=None)
    p_an.add_argument("--tau-grid", default=None, help="comma-separated tau values")
    p_an.add_argument("--eta-grid", default=None, help="comma-separated eta values")
    p_an.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SwitchstabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
