"""Command-line driver.

    bubbletree build-model --config cfg.json --out DIR
    bubbletree verify      --config cfg.json --checks Ij_theta,neck_energy
    bubbletree scan        --config cfg.json --workers 4
    bubbletree flow        --config cfg.json

Exit codes: 0 ok, 2 configuration, 3 model assembly, 4 failed check, 5 flow.
BUBBLETREE_OUT and BUBBLETREE_WORKERS override the output directory and the
worker count; command-line flags override both.
"""
import argparse
import concurrent.futures
import copy
import csv
import json
import math
import os
import sys
from importlib import resources

import jsonschema
import numpy as np

from . import energy as en
from . import flow as fl
from . import model as md
from . import rational as rat
from . import verify as vf
from .errors import (AssumptionViolated, BubbleTreeError, ConfigError, NonpositiveDenominator,
                     ScalesTooClose, StepRejected)
from .geometry import rotation_matrix, stereo_project
from .grid import Field

EXIT_OK, EXIT_CONFIG, EXIT_ASSEMBLY, EXIT_VERIFY, EXIT_FLOW = 0, 2, 3, 4, 5

Z = {"numerator": [[0.0, 0.0], [1.0, 0.0]]}
DEFAULTS = {
    "scenario": "same_orientation",
    "mu": [math.exp(8.0)],
    "delta": [0.05],
    "q0": Z,
    "q1": Z,
    "f_choice": "log",
    "transversal_angle": math.pi / 2,
    "grid": {"n_r": 512, "n_theta": 128, "fd_order": 12},
    "test_space": {"spacing": 0.5, "modes": 2},
    "scan": {"with_Q": False},
    "verify": {"lambda1": [3.0, 10.0, 30.0]},
    "flow": {"preset": "perturbed_sphere", "horizon": 2.0, "amplitude": 0.01, "active": fl.ACTIVE_ZONE,
             "n_r": 128, "n_theta": 32, "dt": None, "report_every": 50, "resume": None},
    "output_dir": "bubbletree-out",
    "seed": 0,
    "workers": 1,
}
DEFAULT_CHECKS = ("cutoff_energy", "neck_energy", "Ij_H", "Ij_theta", "alpha_star", "dominant_index",
                  "expansion_residual", "energy_defect")
EXTRA_CHECKS = ("quotient_Q", "jacobi_spectrum")
SCAN_COLUMNS = ("mu", "delta", "nu", "E", "E_star", "defect", "tension_l2", "dual_norm_lb", "c_mu", "Q",
                "error")


class UsageError(Exception):
    pass


# schema and configuration ------------------------------------------------------------
def load_schema():
    text = resources.files("bubbletree").joinpath("schemas/bubbletree.schema.json").read_text("utf-8")
    return json.loads(text)


def validate(obj, name):
    schema = load_schema()
    jsonschema.validate(obj, {"$ref": f"#/$defs/{name}", "$defs": schema["$defs"]},
                        cls=jsonschema.Draft202012Validator)


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def resolve_config(raw, out=None, seed=None, workers=None, env=None):
    env = os.environ if env is None else env
    try:
        validate(raw, "config")
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    if env.get("BUBBLETREE_OUT"):
        cfg["output_dir"] = env["BUBBLETREE_OUT"]
    if env.get("BUBBLETREE_WORKERS"):
        cfg["workers"] = int(env["BUBBLETREE_WORKERS"])
    if out is not None:
        cfg["output_dir"] = out
    if seed is not None:
        cfg["seed"] = seed
    if workers is not None:
        cfg["workers"] = workers
    return cfg


def descriptors(cfg, delta):
    """(U0, U1) for the configured scenario with U1(0) at distance delta from U0(0)."""
    shift = math.tan(delta / 2.0)
    sc = cfg["scenario"]
    if sc == "same_orientation":
        U0 = md.stereographic_descriptor(3)
        U1 = md.stereographic_descriptor(3, translation=shift)
    elif sc == "opposite_orientation":
        U0 = md.stereographic_descriptor(3)
        U1 = md.stereographic_descriptor(3, conjugated=True, translation=shift)
    else:
        # rotation in the (e2, e4) plane fixes U0(0) = e3 and tilts the tangent plane
        R = rotation_matrix((1, 3), cfg["transversal_angle"], 4)
        U0 = md.stereographic_descriptor(4)
        U1 = md.stereographic_descriptor(4, rotation=R, translation=shift)
    return U0, U1


def gluing_data(cfg, mu, delta):
    U0, U1 = descriptors(cfg, delta)
    q0 = rat.RationalMap.from_json(cfg["q0"])
    q1 = rat.RationalMap.from_json(cfg["q1"])
    return md.GluingData(U0, U1, q0, q1, float(mu), f_choice=cfg["f_choice"])


def _grid_kw(cfg):
    return dict(cfg["grid"])


def _space(cfg, model):
    ts = cfg["test_space"]
    return en.default_space(model, ts["spacing"], ts["modes"])


# output helpers ------------------------------------------------------------------------
def clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, complex):
        return [clean(obj.real), clean(obj.imag)]
    return obj


def write_json(path, obj, schema_name):
    obj = clean(obj)
    validate(obj, schema_name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def _outdir(cfg):
    os.makedirs(cfg["output_dir"], exist_ok=True)
    return cfg["output_dir"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else "nan"
    return str(v)


# build-model -----------------------------------------------------------------------------
def _pairs(cfg):
    if not cfg["mu"] or not cfg["delta"]:
        raise ConfigError("empty sweep list")
    return [(mu, d) for mu in cfg["mu"] for d in cfg["delta"]]


def _assemble(data):
    try:
        return md.assemble(data)
    except (ConfigError, ScalesTooClose):
        raise
    except BubbleTreeError as exc:
        raise AssemblyFailure(f"{type(exc).__name__}: {exc}") from exc


class AssemblyFailure(Exception):
    pass


def cmd_build_model(cfg):
    pairs = _pairs(cfg)
    datas = [(mu, d, gluing_data(cfg, mu, d)) for mu, d in pairs]
    models = []
    for mu, d, data in datas:
        m = _assemble(data)
        grid = m.grid(**_grid_kw(cfg))
        rep = en.energy_defect(m, grid, _space(cfg, m))
        r = m.radii
        models.append({"mu": mu, "delta": d,
                       "radii": {"r0": r.r0, "r1": r.r1, "r_hat": r.r_hat, "c": r.c},
                       "diagnostics": m.diagnostics.to_json(), "energy": rep.to_json(),
                       "assumptions": data.assumption_checks(), "data": data.to_json()})
    path = os.path.join(_outdir(cfg), "model.json")
    write_json(path, {"command": "build-model", "scenario": cfg["scenario"], "models": models},
               "model_summary")
    return EXIT_OK, path


# verify ------------------------------------------------------------------------------------
# grid-versus-quadrature agreement; resolutions below 512 x 128 may need more
GRID_RTOL = 1e-3


class CheckContext:
    def __init__(self, cfg, mu, delta):
        self.cfg, self.mu, self.delta = cfg, mu, delta
        self.data = gluing_data(cfg, mu, delta)
        self._model = self._grid = None

    @property
    def model(self):
        if self._model is None:
            self._model = _assemble(self.data)
        return self._model

    @property
    def grid(self):
        if self._grid is None:
            self._grid = self.model.grid(**_grid_kw(self.cfg))
        return self._grid

    def params(self, **extra):
        return {"scenario": self.cfg["scenario"], "mu": self.mu, "delta": self.delta, **extra}

    def same_surface(self):
        return self.cfg["scenario"] == "same_orientation"

    def probe_direction(self):
        """Direction whose first variation the expansion predicts to be positive."""
        m = self.model
        if self.same_surface():
            return m.direction("translate_U1", a=1.0)
        choice = vf.alpha_star_select(self.data.U0, self.data.U1, j_max=self.j_max())
        j0 = vf.dominant_index(self.data.q0, self.mu, 10.0)
        return m.direction("perturb_q1", j0=j0, theta=float(vf.theta_star(choice.alpha, self.data.q0, j0)))

    def j_max(self):
        return max(rat.vanishing_order(self.data.q0), rat.vanishing_order(self.data.q1)) + 2


def _record(check, params, value, reference, ok, error=None):
    rec = {"check": check, "params": params, "value": value, "reference": reference,
           "pass": None if ok is None else bool(ok)}
    if error is not None:
        rec["error"] = error
    return rec


def check_cutoff_energy(ctx):
    m = ctx.model
    quad = vf.cutoff_energy(m.radii)
    on_grid = vf.cutoff_energy_grid(m, ctx.grid)
    c = m.c_mu
    excess = (quad - 2 * math.pi * c) / c**2
    return [_record("cutoff_energy", ctx.params(),
                    {"energy": quad, "grid_energy": on_grid, "excess_over_c_sq": excess},
                    {"two_pi_c": 2 * math.pi * c}, abs(on_grid / quad - 1) <= GRID_RTOL)]


def check_neck_energy(ctx):
    # E(gamma) is exactly delta^2 / 2 times the cutoff energy; pi c delta^2 is its leading part
    m = ctx.model
    E = vf.neck_energy(m, ctx.grid)
    exact = 0.5 * ctx.model.diagnostics.delta**2 * vf.cutoff_energy(m.radii)
    ok = abs(E / exact - 1) <= GRID_RTOL if exact > 0 else abs(E) <= 1e-10
    return [_record("neck_energy", ctx.params(), E,
                    {"exact": exact, "leading": vf.neck_energy_main_term(m)}, ok)]


def check_Ij_H(ctx):
    out = []
    for j in (1, 2, 3):
        a, b = vf.Ij_H(j, ctx.mu), vf.Ij_H_disc(j, ctx.mu)
        out.append(_record("Ij_H", ctx.params(j=j), {"I": a, "scaled": a * ctx.mu**j},
                           {"disc": b}, abs(a - b) <= 1e-8 * abs(b)))
    return out


def check_Ij_theta(ctx):
    U0, U1 = ctx.data.U0, ctx.data.U1
    out = []
    for j in (1, 2, 3):
        for alpha in (0.0, math.pi / 2, math.pi):
            val = vf.Ij_theta(j, alpha, U0, U1).value
            ref = vf.transversal_closed_form(alpha, U0, U1)
            out.append(_record("Ij_theta", {"scenario": ctx.cfg["scenario"], "delta": ctx.delta,
                                            "j": j, "alpha": alpha}, val, ref, abs(val - ref) <= 1e-6))
    return out


def check_alpha_star(ctx):
    p = {"scenario": ctx.cfg["scenario"], "delta": ctx.delta}
    try:
        ch = vf.alpha_star_select(ctx.data.U0, ctx.data.U1, j_max=ctx.j_max())
    except AssumptionViolated as exc:
        return [_record("alpha_star", p, None, None, None, error=str(exc))]
    return [_record("alpha_star", p, ch.to_json(), {"c_star_positive": True}, ch.c_star > 0)]


def check_dominant_index(ctx):
    out = []
    for lam in ctx.cfg["verify"]["lambda1"]:
        j0 = vf.dominant_index(ctx.data.q0, ctx.mu, lam)
        out.append(_record("dominant_index", ctx.params(lambda1=lam), j0, None, None))
    return out


def check_expansion_residual(ctx):
    m = ctx.model
    p = ctx.params()
    if ctx.same_surface() and ctx.delta == 0:
        rep = vf.expansion_residual(m, m.direction("translate_U1", a=1.0), ctx.grid)
        return [_record("expansion_residual", p, rep.to_json(), 0.0, abs(rep.dE) <= 1e-8)]
    try:
        d = ctx.probe_direction()
    except AssumptionViolated as exc:
        return [_record("expansion_residual", p, None, None, None, error=str(exc))]
    rep = vf.expansion_residual(m, d, ctx.grid)
    p["direction"] = en.direction_label(d)
    if ctx.same_surface():
        return [_record("expansion_residual", p, rep.to_json(), {"neck_term": rep.neck_term},
                        abs(rep.neck_term / rep.dE - 1) <= 0.1)]
    return [_record("expansion_residual", p, rep.to_json(), {"sign": 1}, rep.dE > 0)]


def check_energy_defect(ctx):
    m = ctx.model
    rep = en.energy_defect(m, ctx.grid, _space(ctx.cfg, m))
    vals = rep.to_json()
    ok = all(math.isfinite(v) for v in vals.values())
    if ctx.same_surface() and ctx.delta == 0:
        ok = ok and abs(rep.defect) <= 1e-6
    return [_record("energy_defect", ctx.params(), vals, {"E_star": rep.E_star}, ok)]


def check_quotient_Q(ctx):
    m = ctx.model
    p = ctx.params()
    try:
        d = ctx.probe_direction()
        ts = ctx.cfg["test_space"]
        rep = vf.quotient_Q(m, d, ctx.grid, ts["spacing"], ts["modes"])
    except (NonpositiveDenominator, AssumptionViolated) as exc:
        return [_record("quotient_Q", p, None, None, None, error=str(exc))]
    p["direction"] = en.direction_label(d)
    return [_record("quotient_Q", p, rep.to_json(), None, math.isfinite(rep.Q))]


def check_jacobi_spectrum(ctx):
    m = ctx.model
    ts = ctx.cfg["test_space"]
    u = m.sample(ctx.grid)
    system = en.GalerkinSystem(u, en.model_norm(m), _space(ctx.cfg, m), en.model_test_globals(m, u))
    out = []
    for incl in (True, False):
        rep = vf.jacobi_spectrum(m, system=system, include_delta=incl)
        out.append(_record("jacobi_spectrum", ctx.params(include_delta=incl, spacing=ts["spacing"]),
                           rep.to_json(), None, rep.min_abs > 0 if incl else None))
    return out


CHECKS = {name: globals()[f"check_{name}"] for name in DEFAULT_CHECKS + EXTRA_CHECKS}


def parse_checks(spec):
    if not spec:
        return list(DEFAULT_CHECKS)
    names = [s.strip() for s in spec.split(",") if s.strip()]
    if names == ["all"]:
        return list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigError(f"unknown checks: {', '.join(unknown)}")
    return names


def cmd_verify(cfg, checks=None):
    names = parse_checks(checks)
    pairs = _pairs(cfg)
    contexts = [CheckContext(cfg, mu, d) for mu, d in pairs]
    records = []
    for ctx in contexts:
        for name in names:
            try:
                records.extend(CHECKS[name](ctx))
            except AssemblyFailure:
                raise
            except BubbleTreeError as exc:
                records.append(_record(name, ctx.params(), None, None, False,
                                       error=f"{type(exc).__name__}: {exc}"))
    failed = sum(1 for r in records if r["pass"] is False)
    path = os.path.join(_outdir(cfg), "verify.json")
    write_json(path, {"command": "verify", "scenario": cfg["scenario"], "records": records, "failed": failed},
               "verify_report")
    return (EXIT_VERIFY if failed else EXIT_OK), path


# scan --------------------------------------------------------------------------------------
def scan_row(cfg, mu, delta):
    row = {k: None for k in SCAN_COLUMNS}
    row.update(mu=mu, delta=delta)
    try:
        data = gluing_data(cfg, mu, delta)
        m = md.assemble(data)
        grid = m.grid(**_grid_kw(cfg))
        rep = en.energy_defect(m, grid, _space(cfg, m))
        row.update(nu=m.diagnostics.nu_bar, E=rep.E, E_star=rep.E_star, defect=rep.defect,
                   tension_l2=rep.tension_L2_sphere, dual_norm_lb=rep.dual_norm_lower_bound, c_mu=m.c_mu)
        if cfg["scan"]["with_Q"]:
            ctx = CheckContext(cfg, mu, delta)
            ctx._model, ctx._grid = m, grid
            ts = cfg["test_space"]
            row["Q"] = vf.quotient_Q(m, ctx.probe_direction(), grid, ts["spacing"], ts["modes"]).Q
    except BubbleTreeError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _fit_through_origin(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    s = float(x @ y / (x @ x))
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - s * x) ** 2)) / ss if ss > 0 else float("nan")
    return s, r2


def _fit_line(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss = float(np.sum((y - y.mean()) ** 2))
    return float(coef[0]), 1.0 - float(resid @ resid) / ss if ss > 0 else float("nan")


def scan_fits(rows):
    good = [r for r in rows if not r["error"]]
    delta_fits, mu_fits = [], []
    for mu in sorted({r["mu"] for r in good}):
        sel = [r for r in good if r["mu"] == mu and r["delta"] > 0]
        if len(sel) >= 2:
            s, r2 = _fit_through_origin([r["delta"] ** 2 for r in sel], [r["defect"] for r in sel])
            c = sel[0]["c_mu"]
            delta_fits.append({"mu": mu, "slope": s, "slope_over_pi_c": s / (math.pi * c), "r2": r2,
                               "n": len(sel)})
    for d in sorted({r["delta"] for r in good}):
        sel = sorted((r for r in good if r["delta"] == d and r["dual_norm_lb"]), key=lambda r: r["mu"])
        if len(sel) >= 2:
            x = np.log([r["mu"] for r in sel])
            y = np.log([r["dual_norm_lb"] for r in sel])
            slope, r2 = _fit_line(x, y)
            mu_fits.append({"delta": d, "log_dual_vs_log_mu_slope": slope, "r2": r2, "n": len(sel)})
    return delta_fits, mu_fits


def cmd_scan(cfg):
    pairs = _pairs(cfg)
    for mu, d in pairs:
        gluing_data(cfg, mu, d)  # configuration errors surface before any work
    out = _outdir(cfg)
    csv_path = os.path.join(out, "scan.csv")
    rows = []
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCAN_COLUMNS)
        fh.flush()
        if cfg["workers"] > 1:
            with concurrent.futures.ProcessPoolExecutor(cfg["workers"]) as pool:
                futs = [pool.submit(scan_row, cfg, mu, d) for mu, d in pairs]
                results = (f.result() for f in futs)
                for row in results:
                    rows.append(row)
                    w.writerow([_fmt(row[k]) for k in SCAN_COLUMNS])
                    fh.flush()
        else:
            for mu, d in pairs:
                row = scan_row(cfg, mu, d)
                rows.append(row)
                w.writerow([_fmt(row[k]) for k in SCAN_COLUMNS])
                fh.flush()
    delta_fits, mu_fits = scan_fits(rows)
    errors = sum(1 for r in rows if r["error"])
    write_json(os.path.join(out, "scan_summary.json"),
               {"command": "scan", "scenario": cfg["scenario"], "rows": len(rows), "errors": errors,
                "delta_fits": delta_fits, "mu_fits": mu_fits}, "scan_fit")
    return EXIT_OK, csv_path


# flow ---------------------------------------------------------------------------------------
def flow_initial(cfg):
    f = cfg["flow"]
    if f["resume"]:
        u = Field.load(f["resume"])
        with open(f["resume"] + ".json", encoding="utf-8") as fh:
            meta = json.load(fh).get("meta", {})
        return u, float(meta.get("t", 0.0)), meta.get("dt")
    grid = fl.flow_grid(f["n_r"], f["n_theta"])
    if f["preset"] == "harmonic":
        return Field(grid, stereo_project(grid.z), "sphere"), 0.0, None
    return fl.perturbed_sphere(grid, f["amplitude"], seed=cfg["seed"]), 0.0, None


def cmd_flow(cfg):
    f = cfg["flow"]
    out = _outdir(cfg)
    u, t0, dt_saved = flow_initial(cfg)
    op = fl.FlowOperator(u.grid, f["active"])
    dt = f["dt"] or dt_saved or 0.8 * op.stability_bound()
    e_inf = 4.0 * math.pi
    try:
        state = fl.run_flow(u, f["horizon"], op=op, dt=dt, report_every=f["report_every"],
                            e_inf=e_inf, t0=t0)
    except StepRejected as exc:
        print(f"error: flow failed: {exc}", file=sys.stderr)
        return EXIT_FLOW, None
    hist = os.path.join(out, "flow_history.csv")
    fl.write_history(hist, state)
    field_path = os.path.join(out, "flow_final.field")
    state.u.dump(field_path, meta={"t": state.t, "dt": dt, "preset": f["preset"]})
    write_json(os.path.join(out, "flow_summary.json"),
               {"command": "flow", "preset": f["preset"], "t_start": t0, "t_end": state.t, "dt": dt,
                "steps_rejected": state.rejected, "E_start": state.history[0][1] if state.history else state.energy,
                "E_end": state.energy, "E_inf": e_inf, "rate": state.rate, "rate_r2": state.rate_r2,
                "history_rows": len(state.history), "field": field_path}, "flow_summary")
    return EXIT_OK, hist


# entry point ---------------------------------------------------------------------------------
COMMANDS = {"build-model": cmd_build_model, "verify": cmd_verify, "scan": cmd_scan, "flow": cmd_flow}


def build_parser():
    p = argparse.ArgumentParser(prog="bubbletree", description="Singularity-model laboratory.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON configuration file (defaults apply to missing keys)")
        s.add_argument("--out", help="output directory")
        s.add_argument("--checks", help="comma-separated check families for verify, or 'all'")
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=int)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        raw = {}
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        cfg = resolve_config(raw, out=args.out, seed=args.seed, workers=args.workers)
        np.random.seed(cfg["seed"])
        if args.command == "verify":
            code, path = cmd_verify(cfg, args.checks)
        else:
            code, path = COMMANDS[args.command](cfg)
    except (ConfigError, ScalesTooClose, json.JSONDecodeError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssemblyFailure as exc:
        print(f"error: model assembly failed: {exc}", file=sys.stderr)
        return EXIT_ASSEMBLY
    if path:
        print(path)
    return code


if __name__ == "__main__":
    sys.exit(main())
