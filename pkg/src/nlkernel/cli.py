"""Command-line front end: ``nlkernel <command> [options]``.

Configuration is a flat ``key = value`` file; ``--set key=value`` and the
dedicated flags override it. With no configuration at all every command
reproduces the reference setup (two-phase bar with ``L = 0.2``,
``E1 = 1``, ``E2 = 0.25``).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from nlkernel import dns, kernel as kmod, material, scenarios, training
from nlkernel.fields import QUADRATURE_RULE, config_hash, ensure_dir, read_header, write_field_csv

log = logging.getLogger("nlkernel")

DEFAULTS: dict[str, str] = {
    "L": "0.2",
    "E1": "1",
    "E2": "0.25",
    "rho": "1",
    "dns_dt": "0.01",
    "h": "0.05",
    "dt": "0.02",
    "T_tr": "2",
    "delta": "1.2",
    "M": "24",
    "epsilon": "0.01",
    "c0": "auto",
    "R": "auto",
    "history": "10",
    "gtol": "1e-8",
    "ftol": "1e-12",
    "max_iter": "500",
    "c1": "1e-4",
    "c2": "0.9",
    "gradient": "forward",
    "scenario": "impact",
    "T": "auto",
    "times": "",
    "deltas": "0.8,1.2,1.6",
    "epsilons": "0.001,0.01,0.1",
    "omegas": "0.5,1,1.5,2,2.5,3,3.5,3.8",
    "manifest": "",
    "kernel": "",
}


class ConfigError(ValueError):
    pass


def read_config(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key] = val
    return out


def build_config(args) -> dict[str, str]:
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(read_config(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = v.strip()
    for flag in ("scenario", "kernel", "T"):
        val = getattr(args, flag, None)
        if val is not None:
            cfg[flag] = str(val)
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    return cfg


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def microstructure(cfg) -> material.Microstructure:
    rho = float(cfg["rho"])
    return material.Microstructure(
        float(cfg["L"]), material.Material(float(cfg["E1"]), rho), material.Material(float(cfg["E2"]), rho)
    )


def header(cfg, **extra) -> dict:
    return {"config_hash": config_hash(cfg), "quadrature": QUADRATURE_RULE, **extra}


def train_config(cfg, c0: float, R: float) -> training.TrainConfig:
    return training.TrainConfig(
        delta=float(cfg["delta"]),
        degree=int(cfg["M"]),
        epsilon=float(cfg["epsilon"]),
        h=float(cfg["h"]),
        dt=float(cfg["dt"]),
        T_tr=float(cfg["T_tr"]),
        rho=float(cfg["rho"]),
        c0=c0,
        R=R,
        history=int(cfg["history"]),
        gtol=float(cfg["gtol"]),
        ftol=float(cfg["ftol"]),
        max_iter=int(cfg["max_iter"]),
        c1=float(cfg["c1"]),
        c2=float(cfg["c2"]),
        gradient=cfg["gradient"],
    )


def _scenario(cfg) -> scenarios.Scenario:
    sc = scenarios.parse_scenario(cfg["scenario"])
    if cfg["T"] != "auto":
        sc = replace(sc, T=float(cfg["T"]))
    return sc


def _times(cfg, sc) -> list[float]:
    return _floats(cfg["times"]) or [sc.T]


def _manifest_dir(cfg, out: Path) -> Path:
    return Path(cfg["manifest"]) if cfg["manifest"] else out / "training"


def _effective(cfg, ms, meta: dict | None = None) -> tuple[float, float]:
    """``(c0, R)`` from the config, the manifest header, or a fresh DNS estimate."""
    meta = meta or {}
    c0 = cfg["c0"] if cfg["c0"] != "auto" else meta.get("c0", "auto")
    R = cfg["R"] if cfg["R"] != "auto" else meta.get("R", "auto")
    c0 = material.effective_speed(ms) if c0 == "auto" else float(c0)
    if R == "auto":
        log.info("estimating R from DNS wave packets")
        R = material.estimate_R(ms, dt=float(cfg["dns_dt"])).R
    return c0, float(R)


# commands --------------------------------------------------------------------


def cmd_dns(cfg, out: Path) -> list[Path]:
    ms = microstructure(cfg)
    sc = _scenario(cfg)
    times = _times(cfg, sc)
    b = dns.commensurate_half_width(sc.b, ms)
    x = scenarios.uniform_points(b, float(cfg["h"]))
    _, ref = scenarios.dns_reference(sc, ms, x, x[:1], float(cfg["dns_dt"]), times, float(cfg["dns_dt"]))
    path = out / f"dns_{sc.label.replace(':', '_')}.csv"
    write_field_csv(path, ref, header(cfg, scenario=sc.label))
    return [path]


def cmd_generate(cfg, out: Path) -> list[Path]:
    ms = microstructure(cfg)
    c0, R = _effective(cfg, ms)
    samples = scenarios.generate_training_set(
        ms, h=float(cfg["h"]), dt=float(cfg["dt"]), T_tr=float(cfg["T_tr"]), dns_dt=float(cfg["dns_dt"])
    )
    meta = header(cfg, c0=f"{c0:.17g}", R=f"{R:.17g}")
    return [scenarios.write_manifest(_manifest_dir(cfg, out), samples, meta)]


def _load_training(cfg, out: Path):
    samples, meta = scenarios.read_manifest(_manifest_dir(cfg, out))
    c0, R = _effective(cfg, microstructure(cfg), meta)
    return samples, c0, R


def cmd_train(cfg, out: Path) -> list[Path]:
    samples, c0, R = _load_training(cfg, out)
    tc = train_config(cfg, c0, R)
    kern, report = training.minimize(samples, tc)
    meta = header(cfg, c0=f"{c0:.17g}", R=f"{R:.17g}", status=report.status)
    kpath, rpath = out / "kernel.txt", out / "loss_report.csv"
    kmod.save_kernel(kpath, kern, meta)
    report.write_csv(rpath, header(cfg))
    return [kpath, rpath]


def _kernel(cfg, out: Path) -> kmod.KernelModel:
    path = Path(cfg["kernel"]) if cfg["kernel"] else out / "kernel.txt"
    kern = kmod.load_kernel(path)
    meta, _ = read_header(path)
    if "c0" in meta and "R" in meta and math.isfinite(float(meta["R"])):
        cs = training.ConstraintSystem.build(
            kern.degree, kern.delta, float(cfg["h"]), kern.rho, float(meta["c0"]), float(meta["R"])
        )
        res = np.abs(cs.residuals(kern.coefficients))
        if np.any(res > 1e-10 * np.abs(cs.targets).max()):
            log.warning("kernel %s violates its moment constraints (residuals %s)", path, res)
    return kern


def cmd_dispersion(cfg, out: Path) -> list[Path]:
    kern = _kernel(cfg, out)
    curve = kmod.dispersion(kern, float(cfg["h"]))
    path = out / "dispersion.csv"
    kmod.write_dispersion_csv(path, curve, header(cfg))
    if not curve.is_stable:
        log.warning("dispersion has negative omega^2 at %d wavenumbers", int(curve.unstable.sum()))
    return [path]


def cmd_validate(cfg, out: Path) -> list[Path]:
    kern = _kernel(cfg, out)
    sc = _scenario(cfg)
    res = scenarios.validate(
        kern, sc, microstructure(cfg), float(cfg["h"]), float(cfg["dt"]), _times(cfg, sc), float(cfg["dns_dt"])
    )
    path = out / f"validate_{sc.label.replace(':', '_')}.csv"
    res.write_csv(path, header(cfg))
    return [path]


def cmd_sweep(cfg, out: Path) -> list[Path]:
    samples, c0, R = _load_training(cfg, out)
    ms = microstructure(cfg)
    ref = training.dns_group_velocity(ms, _floats(cfg["omegas"]), dt=float(cfg["dns_dt"]))
    result = training.sweep(samples, _floats(cfg["deltas"]), _floats(cfg["epsilons"]), train_config(cfg, c0, R), ref)
    path = out / "sweep.csv"
    result.write_csv(path, header(cfg))
    return [path]


COMMANDS = {
    "dns": cmd_dns,
    "generate": cmd_generate,
    "train": cmd_train,
    "dispersion": cmd_dispersion,
    "validate": cmd_validate,
    "sweep": cmd_sweep,
}


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlkernel", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="flat key = value configuration file")
        s.add_argument("--out", default="out", help="output directory (default: out)")
        s.add_argument("--scenario", help="kind[:param], e.g. wave_packet:3.9")
        s.add_argument("--kernel", help="kernel file (default: <out>/kernel.txt)")
        s.add_argument("--T", type=float, help="final time")
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        out = ensure_dir(args.out)
        written = COMMANDS[args.command](cfg, out)
    except Exception as exc:
        print(f"nlkernel {args.command}: error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        if not Path(path).exists():
            print(f"nlkernel {args.command}: missing output {path}", file=sys.stderr)
            return 1
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
