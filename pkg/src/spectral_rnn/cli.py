"""Batch experiment front-end.

Subcommands: generate, score-check, moments, decompose, train, train-brnn,
train-scalar, train-linear, eval, sweep.  Every run writes its artifacts under
the output directory together with a manifest listing content hashes, the
config hash, the master seed, and library versions, so (config, seed)
determines every artifact bit for bit.

Exit codes: 0 success, 2 config error, 3 numerical or assumption failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np
import scipy

from . import __version__, spt1
from .config import ConfigError, ExperimentConfig, config_hash, from_items, parse_config, serialize
from .cp_decomp import decompose
from .diagnostics import align, sample_sweep
from .moments import (cross_moment_s2, cross_moment_s3_scalar,
                      cross_moment_s4_reshaped, toeplitz_blocks)
from .recovery import (recover_brnn, recover_linear, recover_quadratic,
                       recover_scalar)
from .score import QuadraticTest, stein_check
from .sequence_models import (AssumptionError, BrnnParams, MarkovChainSpec,
                              RnnParams, bounded_input_spec, brnn_forward,
                              rnn_forward, sample_markov_chain,
                              scalar_output_forward)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


class _Artifacts:
    """Collects written files for the manifest."""

    def __init__(self, out_dir: str, fmt: str):
        self.out_dir = out_dir
        self.fmt = fmt
        self.files: dict[str, str] = {}
        os.makedirs(out_dir, exist_ok=True)

    def _register(self, path: str) -> None:
        with open(path, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        self.files[os.path.relpath(path, self.out_dir)] = digest

    def write_array(self, name: str, arr: np.ndarray) -> str:
        arr = np.asarray(arr, dtype=float)
        if self.fmt == "csv":
            path = os.path.join(self.out_dir, f"{name}.csv")
            np.savetxt(path, arr.reshape(arr.shape[0], -1), delimiter=",")
        else:
            path = os.path.join(self.out_dir, f"{name}.spt1")
            spt1.write_tensor(path, arr)
        self._register(path)
        return path

    def write_text(self, name: str, text: str) -> str:
        path = os.path.join(self.out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        self._register(path)
        return path

    def write_json(self, name: str, record: dict) -> str:
        return self.write_text(name, json.dumps(record, indent=2, sort_keys=True) + "\n")

    def manifest(self, config: ExperimentConfig, seed: int) -> None:
        record = {
            "config_hash": config_hash(config),
            "seed": seed,
            "versions": {
                "spectral_rnn": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "files": self.files,
        }
        path = os.path.join(self.out_dir, "manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _child_seeds(master: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master).spawn(n)]


def _input_spec(config: ExperimentConfig, seed: int) -> MarkovChainSpec:
    w_scale = config["input.w_scale"]
    if config["input.sigma"] == "auto":
        base = bounded_input_spec(config.d_x, w_scale, seed=seed)
        return MarkovChainSpec(W=base.W, sigma=base.sigma, init=config["input.init"])
    rng = np.random.default_rng(seed)
    Q = np.linalg.qr(rng.standard_normal((config.d_x, config.d_x)))[0]
    return MarkovChainSpec(W=w_scale * Q, sigma=float(config["input.sigma"]),
                           init=config["input.init"])


def _rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    return np.linalg.qr(rng.standard_normal((d, d)))[0]


def _make_rnn(config: ExperimentConfig, seed: int, l: int | None = None,
              d_y: int | None = None) -> RnnParams:
    rng = np.random.default_rng(seed)
    d_x, d_h = config.d_x, config.d_h
    d_y = config.d_y if d_y is None else d_y
    rows = np.linalg.qr(rng.standard_normal((d_x, d_h)))[0].T  # orthonormal rows
    A1 = config["model.a1_scale"] * rows
    U = config["model.u_scale"] * _rotation(d_h, rng)
    A2 = rng.standard_normal((d_h, d_y))
    A2 /= np.maximum(np.linalg.norm(A2, axis=1, keepdims=True), 1e-300)
    return RnnParams(A1=A1, U=U, A2=A2, l=config.l if l is None else l)


def _make_brnn(config: ExperimentConfig, seed: int) -> BrnnParams:
    rng = np.random.default_rng(seed)
    d_x, d_h, d_y = config.d_x, config.d_h, config.d_y
    A1 = np.linalg.qr(rng.standard_normal((d_x, d_h)))[0].T * config["model.a1_scale"]
    B1 = np.linalg.qr(rng.standard_normal((d_x, d_h)))[0].T * config["model.a1_scale"]
    scale = config["model.u_scale"]
    U = scale * _rotation(d_h, rng)
    V = scale * _rotation(d_h, rng)
    A2 = rng.standard_normal((2 * d_h, d_y))
    A2 /= np.maximum(np.linalg.norm(A2, axis=1, keepdims=True), 1e-300)
    return BrnnParams(A1=A1, B1=B1, U=U, V=V, A2=A2, l=2)


def _quadratic_moments(config, spec, data):
    burn = config["estimation.burn_in"]
    T2 = cross_moment_s2(spec, data, burn_in=burn).value
    T4 = None
    if config["model.u_scale"] > 0:
        T4 = cross_moment_s4_reshaped(spec, data, shift=-1, burn_in=burn).value
    return T2, T4


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_generate(config, seed, art):
    spec_seed, chain_seed, model_seed = _child_seeds(seed, 3)
    spec = _input_spec(config, spec_seed)
    params = _make_rnn(config, model_seed)
    x = sample_markov_chain(spec, config["estimation.n"], chain_seed)
    data = rnn_forward(params, x)
    art.write_array("x", data.x)
    art.write_array("y", data.y)
    art.write_array("a1_true", params.A1)
    art.write_array("u_true", params.U)
    art.write_array("a2_true", params.A2)
    art.write_array("input_w", spec.W)
    art.write_array("input_sigma", np.array([[spec.sigma]]))
    print(f"generated n={data.n} sequence to {art.out_dir}")
    return EXIT_OK


def _cmd_score_check(config, seed, art):
    spec_seed, chain_seed, probe_seed = _child_seeds(seed, 3)
    spec = _input_spec(config, spec_seed)
    a = np.random.default_rng(probe_seed).standard_normal(config.d_x)
    a /= np.linalg.norm(a)
    err, absolute = stein_check(spec, QuadraticTest(a), m=2,
                                n_samples=config["estimation.n"], seed=chain_seed)
    art.write_json("score_check.json",
                   {"relative_error": err, "absolute": absolute,
                    "n": config["estimation.n"], "order": 2})
    print(f"score check m=2: relative error {err:.4g}")
    if not np.isfinite(err):
        raise AssumptionError("score check produced a non-finite error")
    return EXIT_OK


def _generate_quadratic(config, seed):
    spec_seed, chain_seed, model_seed = _child_seeds(seed, 3)
    spec = _input_spec(config, spec_seed)
    params = _make_rnn(config, model_seed)
    x = sample_markov_chain(spec, config["estimation.n"], chain_seed)
    return spec, params, rnn_forward(params, x)


def _cmd_moments(config, seed, art):
    spec, params, data = _generate_quadratic(config, seed)
    T2, T4 = _quadratic_moments(config, spec, data)
    art.write_array("t2", T2)
    if T4 is not None:
        art.write_array("t4", T4)
    print(f"moment tensors written to {art.out_dir}")
    return EXIT_OK


def _cmd_decompose(config, seed, art):
    path = os.path.join(art.out_dir, "t2.spt1")
    if not os.path.exists(path):
        raise FileNotFoundError(f"expected moment tensor at {path}; run the moments subcommand first")
    T2 = spt1.read_tensor(path)
    cp = decompose(T2, k=config.d_h, seed=seed)
    art.write_array("cp_weights", cp.weights.reshape(1, -1))
    art.write_array("cp_mode1", cp.mode1)
    art.write_array("cp_factor", cp.factor)
    print(f"rank-{cp.rank} decomposition written to {art.out_dir}")
    return EXIT_OK


def _write_estimate(art, est, params):
    art.write_array("a1_hat", est.A1)
    art.write_array("a2_hat", est.A2)
    if est.U is not None:
        art.write_array("u_hat", est.U)
    art.write_array("a1_true", params.A1)
    art.write_array("a2_true", params.A2)
    art.write_array("u_true", params.U)


def _cmd_train(config, seed, art):
    spec, params, data = _generate_quadratic(config, seed)
    T2, T4 = _quadratic_moments(config, spec, data)
    est = recover_quadratic(T2, config.d_h, T4=T4, seed=seed)
    _write_estimate(art, est, params)
    report = align(est.A1, params.A1, A2_est=est.A2, A2_true=params.A2,
                   U_est=est.U, U_true=params.U if est.U is not None else None)
    art.write_json("report.json", {
        "max_error": report.max_error,
        "median_error": report.median_error,
        "a1_row_errors": report.per_row_errors["A1"].tolist(),
        "no_recurrence": est.no_recurrence,
    })
    print(f"train: max aligned row error {report.max_error:.4g}")
    return EXIT_OK


def _cmd_train_brnn(config, seed, art):
    spec_seed, chain_seed, model_seed = _child_seeds(seed, 3)
    spec = _input_spec(config, spec_seed)
    params = _make_brnn(config, model_seed)
    x = sample_markov_chain(spec, config["estimation.n"], chain_seed)
    data = brnn_forward(params, x)
    burn = config["estimation.burn_in"]
    T2 = cross_moment_s2(spec, data, burn_in=burn).value
    T4b = T4f = None
    if config["model.u_scale"] > 0:
        T4b = cross_moment_s4_reshaped(spec, data, shift=-1, burn_in=burn).value
        T4f = cross_moment_s4_reshaped(spec, data, shift=+1, burn_in=burn).value
    est = recover_brnn(T2, config.d_h, T4_back=T4b, T4_fwd=T4f, seed=seed)
    C_hat = np.vstack([est.A1, est.B1])
    C_true = np.vstack([params.A1, params.B1])
    art.write_array("c_hat", C_hat)
    art.write_array("a2_hat", est.A2)
    art.write_array("c_true", C_true)
    art.write_array("a2_true", params.A2)
    report = align(C_hat, C_true)
    art.write_json("report.json", {
        "max_error": report.max_error,
        "median_error": report.median_error,
    })
    print(f"train-brnn: max aligned row error {report.max_error:.4g}")
    return EXIT_OK


def _cmd_train_scalar(config, seed, art):
    spec_seed, chain_seed, model_seed = _child_seeds(seed, 3)
    spec = _input_spec(config, spec_seed)
    if config.l < 3:
        raise AssumptionError("scalar output requires l >= 3")
    params = _make_rnn(config, model_seed, d_y=1)
    x = sample_markov_chain(spec, config["estimation.n"], chain_seed)
    data = scalar_output_forward(params, x)
    T3 = cross_moment_s3_scalar(spec, data, burn_in=config["estimation.burn_in"]).value
    est = recover_scalar(T3, config.d_h, l=params.l, seed=seed)
    art.write_array("a1_hat", est.A1)
    art.write_array("a2_hat", est.A2)
    art.write_array("a1_true", params.A1)
    art.write_array("a2_true", params.A2)
    report = align(est.A1, params.A1)
    art.write_json("report.json", {"max_error": report.max_error})
    print(f"train-scalar: max aligned row error {report.max_error:.4g}")
    return EXIT_OK


def _cmd_train_linear(config, seed, art):
    spec_seed, chain_seed, model_seed = _child_seeds(seed, 3)
    spec = _input_spec(config, spec_seed)
    params = _make_rnn(config, model_seed, l=1)
    x = sample_markov_chain(spec, config["estimation.n"], chain_seed)
    data = rnn_forward(params, x)
    blocks = toeplitz_blocks(spec, data, max_lag=1,
                             burn_in=config["estimation.burn_in"])
    est = recover_linear(blocks[0].value, blocks[1].value, A1_known=params.A1)
    art.write_array("a2_hat", est.A2)
    if est.U is not None:
        art.write_array("u_hat", est.U)
    art.write_array("a2_true", params.A2)
    art.write_array("u_true", params.U)
    err = float(np.linalg.norm(est.A2 - params.A2))
    art.write_json("report.json", {"a2_error": err})
    print(f"train-linear: A2 error {err:.4g}")
    return EXIT_OK


def _read_pair(art, name):
    for ext, reader in ((".spt1", spt1.read_tensor),
                        (".csv", lambda p: np.loadtxt(p, delimiter=",", ndmin=2))):
        path = os.path.join(art.out_dir, name + ext)
        if os.path.exists(path):
            return reader(path)
    return None


def _cmd_eval(config, seed, art):
    A1_hat = _read_pair(art, "a1_hat")
    if A1_hat is None:
        raise FileNotFoundError(f"no estimate found in {art.out_dir}; run a train subcommand first")
    A1_true = _read_pair(art, "a1_true")
    if A1_true is None:
        raise ConfigError("ground truth required for alignment")
    U_hat, U_true = _read_pair(art, "u_hat"), _read_pair(art, "u_true")
    if U_hat is None or U_true is None:
        U_hat = U_true = None
    report = align(A1_hat, A1_true, U_est=U_hat, U_true=U_true)
    art.write_json("eval.json", {
        "max_error": report.max_error,
        "median_error": report.median_error,
        "permutation": report.permutation.tolist(),
        "signs": report.signs.tolist(),
    })
    print(f"eval: max aligned row error {report.max_error:.4g}")
    return EXIT_OK


def _cmd_sweep(config, seed, art, workers):
    cell_master = _child_seeds(seed, 1)[0]

    def run_cell(n, cell_seed):
        sub = ExperimentConfig(values=dict(config.values))
        sub.values["estimation.n"] = int(n)
        mixed = int(np.random.SeedSequence([cell_master, int(n), int(cell_seed)])
                    .generate_state(1)[0])
        spec, params, data = _generate_quadratic(sub, mixed)
        T2, T4 = _quadratic_moments(sub, spec, data)
        est = recover_quadratic(T2, sub.d_h, T4=T4, seed=mixed)
        report = align(est.A1, params.A1)
        return [("A1", int(r), float(e))
                for r, e in enumerate(report.per_row_errors["A1"])]

    result = sample_sweep(run_cell, config["estimation.n_grid"],
                          config["estimation.seeds"], workers=workers)
    art.write_text("sweep.csv", "\n".join(result.csv_lines()) + "\n")
    art.write_json("sweep_summary.json", {
        "slope": result.slope,
        "intercept": result.intercept,
        "config_hash": config_hash(config),
    })
    print(f"sweep: fitted log-log slope {result.slope:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectral-rnn",
        description="Moment-based training experiments for polynomial recurrent models.")
    parser.add_argument("command", choices=[
        "generate", "score-check", "moments", "decompose", "train",
        "train-brnn", "train-scalar", "train-linear", "eval", "sweep"])
    parser.add_argument("--config", metavar="PATH", help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="master seed (overrides model.seed)")
    parser.add_argument("--out", metavar="DIR", default=None, help="output directory")
    parser.add_argument("--set", metavar="K=V", action="append", default=[],
                        help="config override, repeatable")
    parser.add_argument("--workers", type=int, default=None,
                        help="parallel workers (default: SPECTRAL_RNN_WORKERS or CPU count)")
    parser.add_argument("--format", choices=["spt1", "csv"], default=None)
    return parser


def _resolve_workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    env = os.environ.get("SPECTRAL_RNN_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"SPECTRAL_RNN_WORKERS: cannot parse {env!r}") from exc
    return os.cpu_count() or 1


def _load_config(args) -> ExperimentConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.config:
        config = parse_config(args.config, overrides)
    else:
        config = from_items(overrides)
    if args.out:
        config.values["output.dir"] = args.out
    if args.format:
        config.values["output.format"] = args.format
    return config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load_config(args)
        workers = _resolve_workers(args)
        seed = args.seed if args.seed is not None else config["model.seed"]
        art = _Artifacts(config["output.dir"], config["output.format"])
        art.write_text("config.resolved", serialize(config))
        handlers = {
            "generate": _cmd_generate,
            "score-check": _cmd_score_check,
            "moments": _cmd_moments,
            "decompose": _cmd_decompose,
            "train": _cmd_train,
            "train-brnn": _cmd_train_brnn,
            "train-scalar": _cmd_train_scalar,
            "train-linear": _cmd_train_linear,
            "eval": _cmd_eval,
        }
        if args.command == "sweep":
            status = _cmd_sweep(config, seed, art, workers)
        else:
            status = handlers[args.command](config, seed, art)
        art.manifest(config, seed)
        return status
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except (AssumptionError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(json.dumps({"error": "numerical", "message": str(exc)}), file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
