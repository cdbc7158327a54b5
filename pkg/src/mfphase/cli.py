"""Command-line experiment runner.

Exit codes: 0 success, 2 usage, 3 invalid config, 4 missing file,
5 computation/stage failure.  All randomness derives from one top-level
seed (--seed > MFPHASE_SEED > config); CSV artifacts are byte-identical
for identical (config, seed, version).
"""

from __future__ import annotations

import argparse
import csv
import datetime
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_STAGE = 5

SUBCOMMANDS = (
    "synthesize",
    "retrieve",
    "count-independent",
    "freq-step",
    "sync-sim",
    "scatter",
    "report",
)


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfphase",
        description="Multi-frequency phase retrieval experiments for antenna measurements",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        if name != "report":
            p.add_argument("--config", required=True, help="scenario YAML file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="top-level RNG seed")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread hint")
        p.add_argument("--verbose", action="store_true")
        if name == "retrieve":
            p.add_argument(
                "--measurements", default=None, help="existing measurement CSV to read"
            )
    return parser


def _resolve_seed(args, config) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("MFPHASE_SEED")
    if env is not None:
        return int(env)
    return config.seed if config is not None else 0


def _apply_threads(args) -> None:
    threads = args.threads
    if threads is None:
        env = os.environ.get("MFPHASE_THREADS")
        threads = int(env) if env else None
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(threads))


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _residual_csv(path, report) -> None:
    rows = [
        [it, repr(float(db))]
        for it, db in enumerate(report.residual_history_db)
    ]
    _write_rows(path, ["iter", "residual_db"], rows)


def cmd_synthesize(config, out_dir, seed, verbose) -> dict:
    from . import scenario as sc
    from .geometry import dump_points_csv

    syn = sc.synthesize_measurements(config, seed)
    meas_path = os.path.join(out_dir, "measurements.csv")
    sc.write_measurements(
        meas_path, syn.observations, config.frequencies_hz, syn.data, config.store_truth
    )
    dump_points_csv(
        os.path.join(out_dir, "aut_dipoles.csv"), syn.aut.positions, syn.aut.orientations
    )
    dump_points_csv(
        os.path.join(out_dir, "observations.csv"),
        syn.observations.locations,
        syn.observations.polarizations,
    )
    metrics = {
        "n_samples": int(syn.data.n_samples),
        "n_frequencies": int(syn.data.n_frequencies),
        "magnitude_norms": [float(v) for v in (syn.data.magnitudes**2).sum(axis=1) ** 0.5],
    }
    if verbose:
        print(f"synthesized {syn.data.n_samples} samples x {syn.data.n_frequencies} frequencies")
    return {
        "metrics": metrics,
        "artifacts": ["measurements.csv", "aut_dipoles.csv", "observations.csv"],
    }


def cmd_retrieve(config, out_dir, seed, verbose, measurements=None) -> dict:
    import numpy as np

    from . import scenario as sc
    from .diagnostics import ff_error_curve, nf_errors
    from .forward import assemble_forward, ff_cut
    from .retrieval import multifreq_retrieve

    artifacts = []
    if measurements is None:
        syn = sc.synthesize_measurements(config, seed)
        obs, freqs, data = syn.observations, list(config.frequencies_hz), syn.data
        aut = syn.aut
        meas_path = os.path.join(out_dir, "measurements.csv")
        sc.write_measurements(meas_path, obs, freqs, data, config.store_truth)
        artifacts.append("measurements.csv")
    else:
        obs, freqs, data = sc.read_measurements(measurements)
        aut = None

    model = sc.model_dipoles(config)
    if config.probe.kind == "array":
        ops = sc.forward_operators(model, config)
    else:
        ops = [assemble_forward(model, obs, f) for f in freqs]
    result = multifreq_retrieve(
        ops,
        data,
        config.solver.options(),
        config.solver.pinv_rel_tol,
        seed=seed,
    )

    reports = {name: rep.to_dict() for name, rep in result.reports.items()}
    for name, rep in result.reports.items():
        fname = f"residual_history_{name}.csv"
        _residual_csv(os.path.join(out_dir, fname), rep)
        artifacts.append(fname)

    metrics: dict = {"frequencies_hz": [float(f) for f in freqs]}
    if data.true_complex is not None:
        nf = [
            nf_errors(result.b_estimates[k], data.true_complex[k]).to_dict()
            for k in range(data.n_frequencies)
        ]
        metrics["nf_errors"] = nf
    if aut is not None:
        ff_max = []
        for k, f in enumerate(freqs):
            ref_cut = ff_cut(aut, f)
            rec_cut = ff_cut(sc.with_excitations(model, result.currents[k]), f)
            curve, max_dev = ff_error_curve(rec_cut, ref_cut)
            fname = f"ff_error_f{k}.csv"
            _write_rows(
                os.path.join(out_dir, fname),
                ["theta_deg", "eps_db"],
                [[repr(float(t)), repr(float(v))] for t, v in zip(np.arange(len(curve)), curve)],
            )
            artifacts.append(fname)
            ff_max.append(float(max_dev))
        metrics["ff_max_eps_db"] = ff_max
    if verbose:
        for name, rep in reports.items():
            print(f"{name}: {rep['termination']} at residual {rep['final_residual_db']:.1f} dB")
    return {"metrics": metrics, "reports": reports, "artifacts": artifacts}


def cmd_count_independent(config, out_dir, seed, verbose) -> dict:
    from . import scenario as sc
    from .diagnostics import dump_curve_csv, independence_sweep

    aut = sc.build_aut(config.aut)
    surf = config.surfaces[0]
    r2 = config.independence.second_radius or 2.0 * surf.radius
    gens = sc.independence_generators(
        aut,
        config.frequencies_hz[config.reference_index],
        surf.radius,
        r2,
        config.probe.separation,
        config.frequencies_hz,
        seed=seed,
        pinv_rel_tol=config.solver.pinv_rel_tol,
    )
    curves = independence_sweep(
        gens, config.independence.m_values, config.independence_threshold
    )
    artifacts = []
    saturations = {}
    for name, curve in curves.items():
        fname = f"counts_{name}.csv"
        dump_curve_csv(os.path.join(out_dir, fname), curve)
        artifacts.append(fname)
        saturations[name] = curve.saturation()
        if verbose:
            print(f"{name}: saturation {curve.saturation()}")
    return {"metrics": {"saturation": saturations}, "artifacts": artifacts}


def cmd_freq_step(config, out_dir, seed, verbose) -> dict:
    import numpy as np

    from .diagnostics import freq_step_ratio, max_freq_step
    from .geometry import dipole_ring

    fs = config.freq_step
    obs = np.array([fs.obs_distance, 0.0, 0.0])
    deltas = np.linspace(
        fs.delta_f_max_hz / fs.n_steps, fs.delta_f_max_hz, fs.n_steps
    )
    rows = []
    for d in fs.ring_radii:
        ring = dipole_ring(fs.ring_count, d)
        for df in deltas:
            ratio = freq_step_ratio(ring, obs, fs.f1_hz, fs.f1_hz + df)
            rows.append([repr(float(d)), repr(float(df)), repr(float(ratio))])
    _write_rows(os.path.join(out_dir, "freq_step.csv"), ["d_m", "delta_f_hz", "sigma_ratio"], rows)
    metrics = {
        "max_freq_step_hz": {repr(float(d)): max_freq_step(d) for d in fs.ring_radii}
    }
    if verbose:
        for d, v in metrics["max_freq_step_hz"].items():
            print(f"d={d} m: max step {v / 1e6:.1f} MHz")
    return {"metrics": metrics, "artifacts": ["freq_step.csv"]}


def cmd_sync_sim(config, out_dir, seed, verbose) -> dict:
    import numpy as np

    from . import syncsim as ss

    cfg = config.sync
    master = np.random.SeedSequence(seed)
    keys = master.spawn(3 + cfg.n_positions)
    comb = ss.make_comb(
        cfg.f_start_hz, cfg.f_stop_hz, cfg.n_tones, seed=int(keys[0].generate_state(1)[0])
    )
    rng = np.random.default_rng(keys[1])
    gains = rng.standard_normal(cfg.n_positions) + 1j * rng.standard_normal(cfg.n_positions)
    gains /= np.abs(gains)
    gains *= 1.0 + 0.2 * rng.standard_normal(cfg.n_positions)
    delays = 40e-9 * rng.random(cfg.n_positions)
    channels = gains[:, None] * np.exp(
        -2j * np.pi * np.outer(delays, comb.freqs_hz + cfg.lo_offset_hz)
    )
    if 0 <= cfg.null_position < cfg.n_positions:
        channels[cfg.null_position] *= 1e-3
    dt = 1.0 / cfg.sample_rate
    mags = np.empty((cfg.n_positions, cfg.n_tones))
    phases = np.empty((cfg.n_positions, cfg.n_tones))
    errors = np.empty((cfg.n_positions, cfg.n_tones))
    pos_rng = np.random.default_rng(keys[2])
    for p in range(cfg.n_positions):
        imp = ss.ReceiverImpairments(
            lo_offset_hz=cfg.lo_offset_hz,
            lo_phase_rad=float(pos_rng.uniform(-np.pi, np.pi)),
            start_offset_s=float(cfg.jitter_samples * dt * pos_rng.uniform(-1.0, 1.0)),
            noise_level=cfg.noise_level,
        )
        capture = ss.simulate_chain(
            comb,
            channels[p],
            imp,
            cfg.sample_rate,
            cfg.n_periods,
            noise_seed=int(keys[3 + p].generate_state(1)[0]),
        )
        sync = ss.synchronize(capture)
        est = ss.extract_relative_phases(
            sync.aligned, comb, cfg.lo_offset_hz, cfg.sample_rate
        )
        mags[p] = est.magnitudes
        phases[p] = ss.channel_relative_phases(est, comb)
        truth = ss.wrap_phase(np.angle(channels[p]) - np.angle(channels[p, 0]))
        errors[p] = ss.wrap_phase(phases[p] - truth)
    ss.dump_tone_table_csv(
        os.path.join(out_dir, "sync_phases.csv"), comb.freqs_hz + cfg.lo_offset_hz, mags, phases
    )
    stats = ss.multi_position_consistency(errors, reference_position=0)
    _write_rows(
        os.path.join(out_dir, "sync_errors.csv"),
        ["position", "mean_deg", "std_deg", "min_deg", "max_deg"],
        [
            [
                p,
                repr(float(np.degrees(stats.per_position_mean[p]))),
                repr(float(np.degrees(stats.per_position_std[p]))),
                repr(float(np.degrees(stats.per_position_min[p]))),
                repr(float(np.degrees(stats.per_position_max[p]))),
            ]
            for p in range(cfg.n_positions)
        ],
    )
    metrics = {
        "per_position_std_deg": [float(np.degrees(v)) for v in stats.per_position_std],
        "max_std_deg_excl_null": float(
            np.degrees(
                max(
                    stats.per_position_std[p]
                    for p in range(cfg.n_positions)
                    if p != cfg.null_position
                )
            )
        ),
    }
    if verbose:
        print(f"per-position residual std (deg): {metrics['per_position_std_deg']}")
    return {"metrics": metrics, "artifacts": ["sync_phases.csv", "sync_errors.csv"]}


def cmd_scatter(config, out_dir, seed, verbose) -> dict:
    import numpy as np

    from . import scenario as sc
    from .diagnostics import dump_scatter_csv, scatter_study
    from .operators import stack_multifreq
    from .retrieval import spectral_init, wirtinger_solve

    syn = sc.synthesize_measurements(config, seed)
    data = syn.data
    i = data.reference_index
    a_ref = syn.operators[i].matrix
    opts = config.solver.options()
    single_special = spectral_init(a_ref, data.magnitudes[i])
    single = scatter_study(
        a_ref,
        data.magnitudes[i],
        syn.true_samples[i],
        config.solver.trials,
        special_init=single_special,
        special_kind="spectral",
        seed=seed,
        options=opts,
    )
    artifacts = ["scatter_single.csv"]
    dump_scatter_csv(os.path.join(out_dir, "scatter_single.csv"), single)
    metrics = {
        "single_median_compl_db": float(np.median([p.compl_dev_db for p in single])),
    }
    if data.n_frequencies > 1:
        bundle = stack_multifreq(syn.operators, data, config.solver.pinv_rel_tol)
        stacked_truth = syn.true_samples.reshape(-1)
        multi_special = wirtinger_solve(
            a_ref, data.magnitudes[i], single_special, opts
        ).solution
        multi = scatter_study(
            bundle.a_tilde,
            data.stacked_magnitudes(),
            stacked_truth,
            config.solver.trials,
            special_init=multi_special,
            special_kind="single-frequency",
            seed=seed,
            options=opts,
        )
        dump_scatter_csv(os.path.join(out_dir, "scatter_multi.csv"), multi)
        artifacts.append("scatter_multi.csv")
        metrics["multi_median_compl_db"] = float(np.median([p.compl_dev_db for p in multi]))
    if verbose:
        print(f"scatter medians: {metrics}")
    return {"metrics": metrics, "artifacts": artifacts}


def cmd_report(out_dir, verbose) -> dict:
    import math

    from .scenario import RunRecord

    path = os.path.join(out_dir, "run_record.json")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    record = RunRecord.load(path)
    mismatches = []
    for name, rep in record.reports.items():
        recomputed = 20.0 * math.log10(max(rep["final_residual"], 1e-300))
        if abs(recomputed - rep["final_residual_db"]) > 1e-12:
            mismatches.append(f"{name}.final_residual_db")
    nf = record.metrics.get("nf_errors", [])
    for k, entry in enumerate(nf):
        for key in ("eps_mag", "eps_compl"):
            recomputed = 20.0 * math.log10(max(entry[key], 1e-300))
            if abs(recomputed - entry[f"{key}_db"]) > 1e-12:
                mismatches.append(f"nf_errors[{k}].{key}_db")
    print(f"run: {record.subcommand} (seed {record.seed}, version {record.version})")
    print(f"config hash: {record.config_hash}")
    for name, rep in record.reports.items():
        print(
            f"  {name}: {rep['termination']} after {rep['iterations']} iterations, "
            f"residual {rep['final_residual_db']:.2f} dB"
        )
    for key, value in record.metrics.items():
        print(f"  {key}: {value}")
    if mismatches:
        raise RuntimeError(f"stored metrics do not recompute: {mismatches}")
    print("metric recomputation check: ok")
    return {}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    _apply_threads(args)

    from .scenario import ConfigError, RunRecord, load_config

    try:
        config = None
        if getattr(args, "config", None) is not None:
            if not os.path.exists(args.config):
                print(f"error:missing-file: {args.config}", file=sys.stderr)
                return EXIT_MISSING
            config = load_config(args.config)
        seed = _resolve_seed(args, config)
        os.makedirs(args.out, exist_ok=True)

        if args.subcommand == "report":
            cmd_report(args.out, args.verbose)
            return EXIT_OK

        started = _utcnow()
        if args.subcommand == "synthesize":
            outcome = cmd_synthesize(config, args.out, seed, args.verbose)
        elif args.subcommand == "retrieve":
            if args.measurements is not None and not os.path.exists(args.measurements):
                print(f"error:missing-file: {args.measurements}", file=sys.stderr)
                return EXIT_MISSING
            outcome = cmd_retrieve(config, args.out, seed, args.verbose, args.measurements)
        elif args.subcommand == "count-independent":
            outcome = cmd_count_independent(config, args.out, seed, args.verbose)
        elif args.subcommand == "freq-step":
            outcome = cmd_freq_step(config, args.out, seed, args.verbose)
        elif args.subcommand == "sync-sim":
            outcome = cmd_sync_sim(config, args.out, seed, args.verbose)
        elif args.subcommand == "scatter":
            outcome = cmd_scatter(config, args.out, seed, args.verbose)
        else:  # unreachable behind argparse
            print(f"error:usage: unknown subcommand {args.subcommand}", file=sys.stderr)
            return EXIT_USAGE

        record = RunRecord(
            subcommand=args.subcommand,
            config_hash=config.config_hash(),
            seed=seed,
            started_utc=started,
            finished_utc=_utcnow(),
            reports=outcome.get("reports", {}),
            metrics=outcome.get("metrics", {}),
            artifacts=outcome.get("artifacts", []),
        )
        record.save(os.path.join(args.out, "run_record.json"))
        print(f"{args.subcommand}: ok ({args.out})")
        return EXIT_OK
    except ConfigError as exc:
        print(f"error:config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error:missing-file: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:
        print(f"error:stage: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
