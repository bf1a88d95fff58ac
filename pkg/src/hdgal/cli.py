"""Command-line interface: ``hdgal {solve,study,verify,mesh}``.

Settings come from built-in defaults, then an optional ``--config``
file of ``key=value`` lines (``#`` starts a comment), then flags.
Exit status: 0 success, 1 solver or verification failure, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, fields

log = logging.getLogger("hdgal")

CASES = ("lid", "bfs")
SUBCOMMANDS = ("solve", "study", "verify", "mesh")


class ConfigError(ValueError):
    pass


def _float_list(s: str) -> tuple:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _int_list(s: str) -> tuple:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass
class RunConfig:
    subcommand: str = "solve"
    case: str = "lid"
    nx: int = 8
    k: int = 2
    gamma: float = 1e4
    alpha: float | None = None
    precond: str = "GM"
    schedule: tuple | None = None
    re_max: float | None = None
    rtol_outer: float = 1e-4
    atol_outer: float = 1e-9
    rtol_inner: float = 1e-2
    atol_inner: float = 1e-8
    newton_atol: float = 1e-7
    newton_rtol: float = 1e-8
    newton_max_iter: int = 25
    restart: int = 300
    outflow: str = "directional"
    levels: tuple = (4, 8, 16)
    re: float = 1.0
    instances: int = 50
    output: str | None = None
    seed: int = 0
    threads: int | None = None
    timings: bool = True

    @property
    def alpha_value(self) -> float:
        return 10.0 * self.k * self.k if self.alpha is None else self.alpha

    def validate(self) -> "RunConfig":
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"subcommand: unknown value {self.subcommand!r}")
        if self.case not in CASES:
            raise ConfigError(f"case: must be one of {CASES}, got {self.case!r}")
        if self.precond not in ("G", "GM"):
            raise ConfigError(f"precond: must be G or GM, got {self.precond!r}")
        if self.outflow not in ("directional", "plain"):
            raise ConfigError(f"outflow: must be directional or plain, got {self.outflow!r}")
        if self.nx < 1:
            raise ConfigError("nx: must be >= 1")
        if not 1 <= self.k <= 4:
            raise ConfigError("k: must be in 1..4")
        for name in ("gamma", "rtol_outer", "atol_outer", "rtol_inner", "atol_inner", "newton_atol", "newton_rtol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be positive")
        if self.alpha is not None and self.alpha <= 0:
            raise ConfigError("alpha: must be positive")
        if self.schedule is not None and self.re_max is not None:
            raise ConfigError("schedule and re_max are mutually exclusive")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads: must be >= 1")
        return self


_PARSERS = {
    "subcommand": str, "case": str, "nx": int, "k": int, "gamma": float, "alpha": float,
    "precond": str, "schedule": _float_list, "re_max": float, "rtol_outer": float,
    "atol_outer": float, "rtol_inner": float, "atol_inner": float, "newton_atol": float,
    "newton_rtol": float, "newton_max_iter": int, "restart": int, "outflow": str,
    "levels": _int_list, "re": float, "instances": int, "output": str, "seed": int,
    "threads": int, "timings": _bool,
}
assert set(_PARSERS) == {f.name for f in fields(RunConfig)}


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if val.lower() == "none":
            out[key] = None
            continue
        try:
            out[key] = _PARSERS[key](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return out


def load_config(path: str | os.PathLike, base: RunConfig | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    vals = parse_config_text(text)
    return dataclasses.replace(base or RunConfig(), **vals).validate()


def _render_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(repr(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name}={_render_value(getattr(cfg, f.name))}\n" for f in fields(RunConfig))


# output ------------------------------------------------------------------------------------

def check_writable(path: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(d) or not os.access(d, os.W_OK):
        raise ConfigError(f"output path not writable: {path}")


def atomic_write(path: str, data: str | bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


@contextlib.contextmanager
def thread_limit(n: int | None):
    if n is None:
        env = os.environ.get("HDGAL_THREADS")
        n = int(env) if env and env.isdigit() else None
    if n is None:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # optional dependency
        log.warning("threadpoolctl not installed; thread count %d not enforced", n)
        yield
        return
    with threadpool_limits(limits=n):
        yield


# commands ------------------------------------------------------------------------------------

def _cmd_solve(cfg: RunConfig) -> int:
    import numpy as np

    from .alprecond import PreconditionerSpec
    from .driver import (ContinuationSchedule, NewtonConfig, NewtonDivergence, bfs_case, lid_case,
                         make_mesh, reports_to_csv, reports_to_json, solve_steady)
    from .krylov import KrylovConfig

    case = lid_case() if cfg.case == "lid" else bfs_case()
    if cfg.schedule is not None:
        sched = ContinuationSchedule(cfg.schedule)
    else:
        sched = ContinuationSchedule.default(cfg.case, cfg.re_max if cfg.re_max is not None else 10000.0)
    inner = KrylovConfig(cfg.rtol_inner, cfg.atol_inner, cfg.restart, 300, min_iterations=1)
    spec = PreconditionerSpec(cfg.precond, inner, inner)
    outer = KrylovConfig(cfg.rtol_outer, cfg.atol_outer, cfg.restart, 300)
    newton = NewtonConfig(cfg.newton_atol, cfg.newton_rtol, cfg.newton_max_iter)
    mesh = make_mesh(cfg.case, cfg.nx)
    done = []

    def progress(r):
        done.append(r)
        print(f"Re={r.re:g} newton={r.newton_iters} outer={r.max_outer} inner={r.max_inner} "
              f"t={r.wall_seconds:.2f}s", file=sys.stderr)

    status = 0
    try:
        solve_steady(case, mesh, cfg.k, cfg.gamma, cfg.alpha, sched, spec, newton, outer,
                     on_report=progress, outflow=cfg.outflow)
    except NewtonDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = 1
        if cfg.output and exc.state is not None:
            buf = _npz_bytes(np, state=exc.state, residuals=np.asarray(exc.residuals), re=exc.re)
            atomic_write(cfg.output + ".dump.npz", buf)
    csv_text = reports_to_csv(done, cfg.timings)
    if cfg.output:
        atomic_write(cfg.output, csv_text)
        atomic_write(os.path.splitext(cfg.output)[0] + ".json", reports_to_json(done, cfg.timings))
    else:
        sys.stdout.write(csv_text)
    return status


def _npz_bytes(np, **arrays) -> bytes:
    import io

    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def _cmd_study(cfg: RunConfig) -> int:
    import json

    from .driver import convergence_study

    res = convergence_study(cfg.k, cfg.levels, cfg.re, cfg.gamma, precond=cfg.precond)
    text = res.table() + "\n"
    sys.stdout.write(text)
    if cfg.output:
        payload = {"k": res.k, "levels": res.levels, "rates": res.rates,
                   "errors": [e.as_dict() for e in res.errors]}
        atomic_write(cfg.output, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


def _cmd_verify(cfg: RunConfig) -> int:
    from .perturblab import run_verification

    rep = run_verification(cfg.seed, cfg.instances)
    sys.stderr.write(rep.text() + "\n")
    if cfg.output:
        atomic_write(cfg.output, rep.to_json())
    else:
        sys.stdout.write(rep.to_json())
    return 0 if rep.passed else 1


def _cmd_mesh(cfg: RunConfig) -> int:
    import io

    from .driver import make_mesh
    from .mesh import write_mesh

    m = make_mesh(cfg.case, cfg.nx)
    buf = io.StringIO()
    write_mesh(m, buf)
    if cfg.output:
        atomic_write(cfg.output, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


COMMANDS = {"solve": _cmd_solve, "study": _cmd_study, "verify": _cmd_verify, "mesh": _cmd_mesh}


# argument parsing ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hdgal", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp, *names):
        sp.add_argument("--config")
        sp.add_argument("--output", "-o")
        sp.add_argument("--threads", type=int)
        if "mesh" in names:
            sp.add_argument("--case", choices=CASES)
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--nx", type=int, help="squares per side (lid)")
            g.add_argument("--n", type=int, help="cells per unit length (bfs)")
        if "disc" in names:
            sp.add_argument("--k", type=int)
            sp.add_argument("--gamma", type=float)
            sp.add_argument("--alpha", type=float)
            sp.add_argument("--precond")

    s = sub.add_parser("solve", help="steady solve with Reynolds continuation")
    common(s, "mesh", "disc")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--re-max", type=float, dest="re_max")
    g.add_argument("--schedule", type=_float_list)
    for name in ("rtol_outer", "atol_outer", "rtol_inner", "atol_inner", "newton_atol", "newton_rtol"):
        s.add_argument("--" + name.replace("_", "-"), type=float, dest=name)
    s.add_argument("--newton-max-iter", type=int, dest="newton_max_iter")
    s.add_argument("--restart", type=int)
    s.add_argument("--outflow", choices=("directional", "plain"))
    s.add_argument("--no-timings", action="store_false", dest="timings", default=None)

    st = sub.add_parser("study", help="manufactured-solution convergence rates")
    common(st, "disc")
    st.add_argument("--levels", type=_int_list)
    st.add_argument("--re", type=float)

    v = sub.add_parser("verify", help="dense perturbation-lab checks")
    common(v)
    v.add_argument("--seed", type=int)
    v.add_argument("--instances", type=int)

    m = sub.add_parser("mesh", help="write a generated mesh")
    common(m, "mesh")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(subcommand=ns.subcommand)
    if getattr(ns, "config", None):
        cfg = load_config(ns.config, cfg)
        cfg.subcommand = ns.subcommand
    over = {}
    for f in fields(RunConfig):
        if f.name == "subcommand":
            continue
        v = getattr(ns, f.name, None)
        if v is not None:
            over[f.name] = v
    n = getattr(ns, "n", None)
    if n is not None:
        over["nx"] = n
    cfg = dataclasses.replace(cfg, **over)
    if "schedule" in over and cfg.re_max is not None and "re_max" not in over:
        cfg.re_max = None
    if "re_max" in over and cfg.schedule is not None and "schedule" not in over:
        cfg.schedule = None
    return cfg.validate()


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(ns)
        if cfg.output:
            check_writable(cfg.output)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    with thread_limit(cfg.threads):
        return COMMANDS[cfg.subcommand](cfg)


if __name__ == "__main__":
    sys.exit(main())
