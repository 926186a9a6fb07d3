"""Command-line driver: ``kerrcoupler <command> [options]``.

Commands
  steady      steady-state intensities, branch stability, bistability; --sweep-eps2 for S-curves
  stability   drift eigenvalues and linearisation validity at one steady state
  spectrum    output Duan / EPR / log-negativity spectra from the linearised theory
  scan-theta  quadrature angle that minimises the Duan sum
  sde         positive-P ensemble statistics and stochastic spectra
  replay      re-run the command recorded in a manifest and compare outputs

Parameters come from built-in defaults, then ``--config FILE`` (flat
``key = value`` lines), then flags; later sources win.  ``--eps`` style flags
set both modes, ``--eps1``/``--eps2`` style flags set one.  Any long option can
also be given in the config file under its underscored name.  Angles are in
degrees on the command line.  ``KERRCOUPLER_THREADS`` sets the SDE worker count
without changing results.

Exit codes
  0 success             2 invalid parameters or options
  3 steady state did not converge
  4 linearisation invalid (use ``sde`` instead)
  5 SDE divergence rate above --max-divergence
  1 replay output differs from the manifest
"""
from __future__ import annotations

import argparse
import configparser
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, criteria, fluct, sde, steady
from .manifest import RunManifest, load_manifest, manifest_path, write_csv, write_json
from .model import PARAM_KEYS, CouplerParams, FrequencyGrid, ParameterError, params_from_mapping, symmetric, validate

EXIT_OK = 0
EXIT_REPLAY_DIFFERS = 1
EXIT_INVALID = 2
EXIT_NO_CONVERGENCE = 3
EXIT_LINEARIZATION = 4
EXIT_DIVERGENCE = 5

SYMMETRIC_ALIASES = {"eps": ("eps1", "eps2"), "gamma": ("gamma1", "gamma2"),
                     "delta": ("delta1", "delta2"), "chi": ("chi1", "chi2")}
PARAM_DEFAULTS = {"eps": 1000.0, "gamma": 1.0, "delta": 10.0, "chi": 1e-6, "J": 10.0}
PARAM_DESTS = tuple(SYMMETRIC_ALIASES) + PARAM_KEYS
NOT_REPLAYED = ("config", "out", "command", "manifest")

OPTION_DEFAULTS = {
    "format": "csv",
    "omega_max": 30.0,
    "omega_points": 601,
    "theta": [0.0],
    "optimize_theta": False,
    "b": 1.0,
    "pairing": "-+",
    "measure": "all",
    "root_index": 0,
    "sweep_eps2": None,
    "theta_step": 1.0,
    "no_refine": False,
    "per_omega": False,
    "seed": 0,
    "ntraj": 10_000,
    "dt": 1e-3,
    "t_end": 60.0,
    "burn_in": 20.0,
    "scheme": "semi_implicit",
    "chunk_size": 250,
    "sample_every": 10,
    "max_divergence": 0.01,
    "dump_trajectories": 0,
    "divergence_bound": None,
    "no_spectrum": False,
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _number(text):
    """Real if possible, else complex (``1000+5j``, ``3e2-1i``)."""
    s = str(text).strip()
    try:
        return float(s)
    except ValueError:
        return complex(s.replace(" ", "").replace("i", "j"))


def _bool(text):
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# -- parser ---------------------------------------------------------------------

def _common(p, grid=True):
    g = p.add_argument_group("parameters")
    g.add_argument("--config", help="flat key = value file; flags override it")
    for name, (m1, m2) in SYMMETRIC_ALIASES.items():
        g.add_argument(f"--{name}", type=_number, default=None,
                       help=f"set {m1} and {m2} (default {PARAM_DEFAULTS[name]:g})")
    g.add_argument("--J", type=float, default=None, help=f"linear coupling (default {PARAM_DEFAULTS['J']:g})")
    for k in PARAM_KEYS:
        if k != "J":
            g.add_argument(f"--{k}", type=_number if k.startswith("eps") else float, default=None)
    o = p.add_argument_group("output")
    o.add_argument("--out", help="output file; a <out>.manifest.json sidecar is written next to it")
    o.add_argument("--format", choices=("csv", "json"), default=None, help="output format (default csv)")
    if grid:
        o.add_argument("--omega-max", type=float, default=None, help="largest analysis frequency (default 30)")
        o.add_argument("--omega-points", type=int, default=None, help="frequency grid points (default 601)")


def _angles(p):
    p.add_argument("--theta", type=float, nargs="+", default=None,
                   help="quadrature angle(s) in degrees (default 0)")
    p.add_argument("--b", type=float, default=None, help="Duan weight b (default 1)")
    p.add_argument("--pairing", choices=criteria.PAIRINGS, default=None,
                   help="'-+' for V(X1-X2)+V(Y1+Y2), '+-' for V(X1+X2)+V(Y1-Y2) (default -+)")


def _root(p):
    p.add_argument("--root-index", type=int, default=None,
                   help="steady root, 0 = lowest branch (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kerrcoupler", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("steady", help="steady states and bistability")
    _common(p, grid=False)
    _root(p)
    p.add_argument("--sweep-eps2", default=None, metavar="START:STOP:N",
                   help="sweep pump power |eps|^2 and write the S-curve")

    p = sub.add_parser("stability", help="drift eigenvalues at a steady state")
    _common(p, grid=False)
    _root(p)

    p = sub.add_parser("spectrum", help="linearised entanglement spectra")
    _common(p)
    _angles(p)
    _root(p)
    p.add_argument("--optimize-theta", action="store_true", default=None,
                   help="use the angle minimising the Duan sum over the grid")
    p.add_argument("--measure", choices=("duan", "epr", "logneg", "all"), default=None)

    p = sub.add_parser("scan-theta", help="optimal quadrature angle")
    _common(p)
    _angles(p)
    _root(p)
    p.add_argument("--theta-step", type=float, default=None, help="scan step in degrees (default 1)")
    p.add_argument("--no-refine", action="store_true", default=None, help="skip golden-section refinement")
    p.add_argument("--per-omega", action="store_true", default=None,
                   help="write the angle-optimised Duan sum at every frequency instead")

    p = sub.add_parser("sde", help="positive-P stochastic integration")
    _common(p)
    _angles(p)
    s = p.add_argument_group("integration")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--ntraj", type=int, default=None, help="trajectories (default 10000)")
    s.add_argument("--dt", type=float, default=None, help="time step (default 1e-3)")
    s.add_argument("--t-end", type=float, default=None, help="total time (default 60)")
    s.add_argument("--burn-in", type=float, default=None, help="discarded initial time (default 20)")
    s.add_argument("--scheme", choices=sde.SCHEMES, default=None)
    s.add_argument("--chunk-size", type=int, default=None,
                   help="trajectories per work unit; fixes reduction order (default 250)")
    s.add_argument("--sample-every", type=int, default=None, help="record stride in steps (default 10)")
    s.add_argument("--max-divergence", type=float, default=None,
                   help="largest tolerated fraction of diverged trajectories (default 0.01)")
    s.add_argument("--divergence-bound", type=float, default=None,
                   help="|alpha| above which a trajectory counts as diverged (default 1e6 |eps| / gamma)")
    s.add_argument("--dump-trajectories", type=int, default=None, metavar="N",
                   help="also write the first N recorded trajectories to <out>.traj.csv")
    s.add_argument("--no-spectrum", action="store_true", default=None, help="statistics only")

    p = sub.add_parser("replay", help="re-run a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="output path (default: original name with .replay inserted)")
    return parser


# -- option resolution -------------------------------------------------------------

def _actions(parser, command):
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return {a.dest: a for a in sub.choices[command]._actions if a.dest != "help"}


def _read_config(path):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + Path(path).read_text(encoding="utf-8"))
    except (OSError, configparser.Error) as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_INVALID)
    return dict(cp["run"])


def _convert(action, text):
    if isinstance(action, argparse._StoreTrueAction):
        return _bool(text)
    conv = action.type or str
    if action.nargs in ("+", "*"):
        return [conv(t) for t in str(text).replace(",", " ").split()]
    value = conv(text)
    if action.choices is not None and value not in action.choices:
        raise ValueError(f"{value!r} not in {tuple(action.choices)}")
    return value


def resolve(args, parser):
    """Effective (params, options) after defaults, config file and flags."""
    actions = _actions(parser, args.command)
    cfg = _read_config(args.config) if getattr(args, "config", None) else {}
    from_cfg = {}
    for key, text in cfg.items():
        if key not in actions or key in NOT_REPLAYED:
            raise CliError(f"unknown config key {key!r}", EXIT_INVALID)
        try:
            from_cfg[key] = _convert(actions[key], text)
        except ValueError as exc:
            raise CliError(f"config key {key}: {exc}", EXIT_INVALID)

    values = {}
    for name, (k1, k2) in SYMMETRIC_ALIASES.items():
        values[k1] = values[k2] = PARAM_DEFAULTS[name]
    values["J"] = PARAM_DEFAULTS["J"]
    for source in (from_cfg, vars(args)):
        for name, (k1, k2) in SYMMETRIC_ALIASES.items():
            if source.get(name) is not None:
                values[k1] = values[k2] = source[name]
        for k in PARAM_KEYS:
            if source.get(k) is not None:
                values[k] = source[k]
    try:
        params = validate(params_from_mapping(values))
    except ParameterError as exc:
        raise CliError(f"invalid parameters: {exc}", EXIT_INVALID)

    opts = {}
    for dest in actions:
        if dest in PARAM_DESTS or dest in NOT_REPLAYED:
            continue
        v = getattr(args, dest, None)
        if v is None:
            v = from_cfg.get(dest)
        if v is None:
            v = OPTION_DEFAULTS.get(dest)
        opts[dest] = v
    return params, opts


def _grid(opts):
    try:
        return np.asarray(FrequencyGrid.linspace(opts["omega_max"], opts["omega_points"]))
    except ValueError as exc:
        raise CliError(f"invalid frequency grid: {exc}", EXIT_INVALID)


def _symmetric_only(params, what):
    if not symmetric(params):
        raise CliError(f"{what} needs symmetric parameters (eps, gamma, delta, chi equal in both modes)",
                       EXIT_INVALID)


def _steady(params, root_index):
    _symmetric_only(params, "the linearised analysis")
    try:
        return steady.symmetric_steady_state(params, root_index)
    except IndexError:
        n = len(set(steady.symmetric_intensities(params)))
        raise CliError(f"root index {root_index} out of range: {n} distinct root(s)", EXIT_INVALID)


def _model(params, root_index):
    ss = _steady(params, root_index)
    model = fluct.build(params, ss)
    if not model.valid:
        raise CliError(
            f"linearisation invalid at I = {ss.intensity1:.6g}: min Re(eigenvalue) = "
            f"{model.stability_margin:.3e}{' (marginal)' if model.marginal else ''}; "
            "use `kerrcoupler sde` for the full stochastic treatment",
            EXIT_LINEARIZATION,
        )
    return ss, model


def _thetas(opts):
    return [math.radians(t) for t in opts["theta"]]


def _fmt(x):
    return f"{x:.10g}"


# -- output ---------------------------------------------------------------------

class Output:
    """Collects files for one run and writes the manifest last."""

    def __init__(self, command, argv, params, opts, grids=None, seed=None):
        self.out = Path(opts.pop("_out")) if opts.get("_out") else None
        self.fmt = opts["format"]
        self.manifest = RunManifest(
            operation=command, argv=list(argv), params=params.as_dict(),
            config={k: v for k, v in opts.items() if not k.startswith("_")},
            grids=grids or {}, seed=seed,
        )
        self.files = []

    def sibling(self, suffix):
        return self.out.with_name(self.out.name + suffix)

    def table(self, header, rows, path=None):
        if self.out is None:
            return
        path = path or self.out
        if self.fmt == "json" and path == self.out:
            cols = list(zip(*rows)) if rows else [[] for _ in header]
            write_json(path, {"provenance": self.manifest.provenance(),
                              "columns": {h: list(c) for h, c in zip(header, cols)}})
        else:
            write_csv(path, header, rows)
        self.files.append(path)

    def report(self, obj, path=None):
        if self.out is None:
            return
        path = path or self.out
        write_json(path, {"provenance": self.manifest.provenance(), **obj})
        self.files.append(path)

    def finish(self, extra_environment=None):
        if self.out is None or not self.files:
            return
        self.manifest.environment = {"python": sys.version.split()[0], **(extra_environment or {})}
        m = self.manifest.write(self.out, self.files)
        print(f"wrote {', '.join(str(f) for f in self.files)} (manifest {m})")


# -- commands -------------------------------------------------------------------

def _parse_sweep(text):
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError:
        raise CliError(f"--sweep-eps2 expects START:STOP:N, got {text!r}", EXIT_INVALID)
    if n < 1 or a < 0 or b < a:
        raise CliError("--sweep-eps2 needs 0 <= START <= STOP and N >= 1", EXIT_INVALID)
    return np.linspace(a, b, n)


def _root_rows(params):
    rows = []
    for i, I in enumerate(steady.symmetric_intensities(params)):
        a = steady.steady_amplitude(params, I)
        m = fluct.from_alpha(params, a)
        rows.append((i, I, a, m.valid, m.marginal, m.stability_margin))
    return rows


def cmd_steady(params, opts, out):
    if opts["sweep_eps2"]:
        _symmetric_only(params, "--sweep-eps2")
        pumps = _parse_sweep(opts["sweep_eps2"])
        out.manifest.grids = {"eps2": pumps.tolist()}
        rows = []
        for e2 in pumps:
            p = CouplerParams.symmetric_set(math.sqrt(e2), params.gamma, params.delta, params.chi, params.J)
            roots = _root_rows(p)
            I = [r[1] for r in roots] + [None] * (3 - len(roots))
            st = [int(r[3]) for r in roots] + [None] * (3 - len(roots))
            rows.append([float(e2), len(roots)] + I + st)
        header = ["eps2", "n_roots", "I_root1", "I_root2", "I_root3", "stable_root1", "stable_root2", "stable_root3"]
        n3 = sum(r[1] == 3 for r in rows)
        print(f"swept {len(rows)} pump powers; {n3} with three roots")
        out.table(header, rows)
        return EXIT_OK

    if not symmetric(params):
        try:
            ss = steady.general_steady_state(params)
        except steady.SteadyStateError as exc:
            raise CliError(str(exc), EXIT_NO_CONVERGENCE)
        print("asymmetric steady state (damped Newton)")
        for j, (a, I) in enumerate(((ss.alpha1, ss.intensity1), (ss.alpha2, ss.intensity2)), 1):
            print(f"  mode {j}: I = {_fmt(I)}  alpha = {a:.10g}")
        print(f"  residual {ss.residual:.3e}")
        header = ["mode", "intensity", "alpha_re", "alpha_im", "residual"]
        out.table(header, [[1, ss.intensity1, ss.alpha1.real, ss.alpha1.imag, ss.residual],
                           [2, ss.intensity2, ss.alpha2.real, ss.alpha2.imag, ss.residual]])
        return EXIT_OK

    roots = _root_rows(params)
    _steady(params, opts["root_index"])
    chosen = sorted(set(r[1] for r in roots))[opts["root_index"]]
    bis = steady.bistability(params)
    print(f"{'root':>4} {'intensity':>22} {'alpha':>40} {'stable':>7} {'min Re(lambda)':>15}")
    for i, I, a, valid, marginal, margin in roots:
        flag = "marg." if marginal else ("yes" if valid else "no")
        mark = " *" if I == chosen else ""
        print(f"{i:>4} {_fmt(I):>22} {f'{a:.10g}':>40} {flag:>7} {margin:>15.6g}{mark}")
    print(f"cubic residual (relative) {steady.cubic_residual(params, chosen):.3e}")
    if bis.possible:
        lo, hi = bis.fold_pumps
        print(f"bistability possible: turning intensities {_fmt(bis.lower_turning)}, {_fmt(bis.upper_turning)}; "
              f"three roots for |eps|^2 in ({_fmt(lo)}, {_fmt(hi)})")
    else:
        print("bistability not possible for these parameters")
    header = ["root", "intensity", "alpha_re", "alpha_im", "stable", "marginal", "min_re_eigenvalue", "selected"]
    rows = [[i, I, a.real, a.imag, int(v), int(m), mg, int(I == chosen)]
            for i, I, a, v, m, mg in roots]
    if out.fmt == "json":
        out.report({
            "roots": [dict(zip(header, r)) for r in rows],
            "bistability": {"possible": bis.possible, "lower_turning": bis.lower_turning,
                            "upper_turning": bis.upper_turning, "fold_pumps": bis.fold_pumps},
        })
    else:
        out.table(header, rows)
    return EXIT_OK


def cmd_stability(params, opts, out):
    ss = _steady(params, opts["root_index"])
    model = fluct.build(params, ss)

    def order(z):
        return sorted(z, key=lambda v: (round(v.real, 9), round(v.imag, 9)))

    num = order(model.eigenvalues)
    ana = order(fluct.eigenvalues_analytic(params, ss.intensity1))
    quo = fluct.eigenvalues_quoted(params, ss.intensity1)
    print(f"I = {_fmt(ss.intensity1)}  alpha = {ss.alpha1:.10g}")
    for z, w in zip(num, ana):
        print(f"  lambda = {z.real:+.10g} {z.imag:+.10g}i   (closed form {w.real:+.10g} {w.imag:+.10g}i)")
    print("  quoted closed form: " + ", ".join(f"{z.real:+.6g}{z.imag:+.6g}i" for z in quo))
    state = "marginal" if model.marginal else ("valid" if model.valid else "invalid")
    print(f"linearisation {state}; min Re(lambda) = {model.stability_margin:.6g}")
    header = ["index", "re", "im", "closed_form_re", "closed_form_im", "quoted_re", "quoted_im"]
    rows = [[i, z.real, z.imag, w.real, w.imag, q.real, q.imag]
            for i, (z, w, q) in enumerate(zip(num, ana, quo))]
    if out.fmt == "json":
        out.report({"intensity": ss.intensity1, "alpha": ss.alpha1, "valid": model.valid,
                    "marginal": model.marginal, "stability_margin": model.stability_margin,
                    "quoted_validity_bound": fluct.quoted_validity_bound(params),
                    "eigenvalues": [dict(zip(header, r)) for r in rows]})
    else:
        out.table(header, rows)
    return EXIT_OK


MEASURE_COLUMNS = {
    "duan": ("duan_sum", "duan_bound"),
    "epr": ("epr_product_1", "epr_product_2"),
    "logneg": ("xi", "logneg", "nu_tilde"),
}


def _columns(measure):
    if measure == "all":
        return sum(MEASURE_COLUMNS.values(), ())
    return MEASURE_COLUMNS[measure]


def _band(omega, mask):
    return (float(omega[mask][0]), float(omega[mask][-1])) if np.any(mask) else None


def cmd_spectrum(params, opts, out):
    ss, model = _model(params, opts["root_index"])
    omega = _grid(opts)
    out.manifest.grids = {"omega": {"max": opts["omega_max"], "points": opts["omega_points"]}}
    b, pairing = opts["b"], opts["pairing"]
    if opts["optimize_theta"]:
        scan = criteria.angle_scan(model, params, omega, b=b, pairing=pairing)
        thetas = [scan.theta]
        print(f"optimal angle {scan.theta_deg:.2f} deg (Duan {scan.duan_sum:.6g} at omega {scan.omega:.4g})")
    else:
        thetas = _thetas(opts)
    cols = _columns(opts["measure"])
    header = ["theta_deg", "omega", *cols]
    rows = []
    print(f"I = {_fmt(ss.intensity1)}; {len(omega)} frequencies in [{omega[0]:g}, {omega[-1]:g}]")
    for th in thetas:
        spec = criteria.entanglement_spectra(model, params, th, omega, b, pairing)
        deg = math.degrees(th)
        for k in range(len(omega)):
            rows.append([deg, float(omega[k])] + [float(spec[c][k]) for c in cols])
        k = int(np.argmin(spec["duan_sum"]))
        e = np.minimum(spec["epr_product_1"], spec["epr_product_2"])
        ke = int(np.argmin(e))
        print(f"theta {deg:7.2f} deg: min Duan {spec['duan_sum'][k]:.6g} at omega {omega[k]:.4g} "
              f"(bound {spec['duan_bound'][0]:g}); min EPR {e[ke]:.6g} at omega {omega[ke]:.4g}; "
              f"logneg > 0 on {_band(omega, spec['logneg'] > 0)}; "
              f"Duan violated on {_band(omega, spec['duan_sum'] < spec['duan_bound'])}")
    out.table(header, rows)
    return EXIT_OK


def cmd_scan_theta(params, opts, out):
    ss, model = _model(params, opts["root_index"])
    omega = _grid(opts)
    b, pairing = opts["b"], opts["pairing"]
    out.manifest.grids = {"omega": {"max": opts["omega_max"], "points": opts["omega_points"]}}
    if opts["per_omega"]:
        vals, ths = criteria.optimal_duan(model, params, omega, b, pairing)
        k = int(np.argmin(vals))
        print(f"angle-optimised Duan: min {vals[k]:.6g} at omega {omega[k]:.4g}, theta {math.degrees(ths[k]):.2f} deg")
        out.table(["omega", "theta_deg", "duan_sum"],
                  [[float(w), math.degrees(t), float(v)] for w, t, v in zip(omega, ths, vals)])
        return EXIT_OK
    step = opts["theta_step"]
    if not 0 < step <= 180:
        raise CliError("--theta-step must be in (0, 180]", EXIT_INVALID)
    thetas = np.radians(np.arange(0.0, 180.0, step))
    scan = criteria.angle_scan(model, params, omega, thetas, b, pairing, refine=not opts["no_refine"])
    land = criteria.duan_landscape(model, params, omega, thetas, b, pairing)
    kmin = np.argmin(land, axis=1)
    print(f"I = {_fmt(ss.intensity1)}")
    print(f"optimal angle {scan.theta_deg:.2f} deg: Duan {scan.duan_sum:.6g} at omega {scan.omega:.4g}"
          f"{' (violated)' if scan.violated else ''}")
    rows = [[math.degrees(t), float(omega[k]), float(land[i, k])] for i, (t, k) in enumerate(zip(thetas, kmin))]
    if out.fmt == "json":
        out.report({"optimum": {"theta_deg": scan.theta_deg, "omega": scan.omega, "duan_sum": scan.duan_sum},
                    "scan": [dict(zip(("theta_deg", "omega", "duan_sum"), r)) for r in rows]})
    else:
        out.table(["theta_deg", "omega", "duan_sum"], rows)
    return EXIT_OK


def _sde_config(opts):
    try:
        return sde.SdeConfig(dt=opts["dt"], t_end=opts["t_end"], n_traj=opts["ntraj"], seed=opts["seed"],
                             burn_in=opts["burn_in"], scheme=opts["scheme"], chunk_size=opts["chunk_size"],
                             sample_every=opts["sample_every"], divergence_bound=opts["divergence_bound"])
    except ValueError as exc:
        raise CliError(f"invalid SDE configuration: {exc}", EXIT_INVALID)


def _linearised(params):
    if not symmetric(params):
        return None, None
    try:
        ss = steady.symmetric_steady_state(params)
        model = fluct.build(params, ss)
    except (steady.SteadyStateError, ParameterError):
        return None, None
    return ss, (model if model.valid else None)


STAT_ROWS = ("alpha1", "alpha2", "alpha1_plus", "alpha2_plus")


def _stats_rows(st):
    rows = []
    for name in STAT_ROWS:
        m, s = getattr(st, f"mean_{name}"), getattr(st, f"se_{name}")
        rows.append([f"{name}_re", m.real, s.real])
        rows.append([f"{name}_im", m.imag, s.imag])
    rows.append(["intensity1", st.mean_intensity1, st.se_intensity1])
    rows.append(["intensity2", st.mean_intensity2, st.se_intensity2])
    rows.append(["n_effective", st.n_effective, None])
    rows.append(["n_diverged", st.n_diverged, None])
    return rows


def cmd_sde(params, opts, out):
    config = _sde_config(opts)
    out.manifest.seed = config.seed
    out.manifest.config["sde"] = config.as_dict()
    ss, model = _linearised(params)
    dump = opts["dump_trajectories"] or 0
    if dump and out.out is None:
        raise CliError("--dump-trajectories needs --out", EXIT_INVALID)
    spectrum = None
    if opts["no_spectrum"]:
        stats = sde.integrate(params, config)
        records = None
    else:
        try:
            spectrum, records = sde.stationary_spectrum(params, config, omega_max=opts["omega_max"],
                                                        keep_records=dump)
        except sde.InsufficientRecordError as exc:
            raise CliError(str(exc), EXIT_INVALID)
        stats = spectrum.stats

    print(f"{stats.n_effective} trajectories kept, {stats.n_diverged} diverged "
          f"(seed {config.seed}, {len(sde._chunks(config))} chunks of {config.chunk_size})")
    for j in (1, 2):
        I, se = getattr(stats, f"mean_intensity{j}"), getattr(stats, f"se_intensity{j}")
        line = f"  <a{j}+ a{j}> = {_fmt(I)} +- {se:.4g}"
        if ss is not None and se > 0:
            line += f"   (steady I = {_fmt(ss.intensity1)}, z = {(I - ss.intensity1) / se:+.2f})"
        print(line)
    for d in stats.diverged[:10]:
        print(f"  diverged: trajectory {d[0]} at t = {d[1]:g}")

    stats_rows = _stats_rows(stats)
    spec_header, spec_rows = None, []
    if spectrum is not None:
        spec_header = ["theta_deg", "omega", "duan_sum", "duan_se", "epr_product_1", "epr_se_1",
                       "epr_product_2", "epr_se_2", "logneg", "logneg_se", "linearized_duan_sum"]
        w = spectrum.omega
        for th in _thetas(opts):
            d, dse = spectrum.duan(th, opts["b"], opts["pairing"])
            e, ese = spectrum.epr(th)
            ln, lnse = spectrum.logneg(th)
            lin = (criteria.entanglement_spectra(model, params, th, w, opts["b"], opts["pairing"])["duan_sum"]
                   if model is not None else np.full(w.shape, np.nan))
            for k in range(len(w)):
                spec_rows.append([math.degrees(th), float(w[k]), d[k], dse[k], e[0, k], ese[0, k],
                                  e[1, k], ese[1, k], ln[1, k], lnse[1, k], lin[k]])
            if model is not None:
                k = int(np.argmin(lin))
                z = (d[k] - lin[k]) / dse[k] if dse[k] > 0 else float("nan")
                print(f"  theta {math.degrees(th):.2f} deg: linearised Duan minimum {lin[k]:.6g} at omega {w[k]:.4g}; "
                      f"SDE {d[k]:.6g} +- {dse[k]:.3g} (z = {z:+.2f})")

    if out.fmt == "json":
        obj = {"stats": stats.as_dict()}
        if ss is not None:
            obj["steady"] = {"intensity": ss.intensity1, "alpha": ss.alpha1}
        if spectrum is not None:
            obj["spectrum"] = {h: [r[i] for r in spec_rows] for i, h in enumerate(spec_header)}
        out.report(obj)
    elif spectrum is not None:
        out.table(spec_header, spec_rows)
        out.table(["quantity", "mean", "se"], stats_rows, out.sibling(".stats.csv"))
    else:
        out.table(["quantity", "mean", "se"], stats_rows)
    if dump and records is not None and len(records):
        dts = config.dt * config.sample_every
        rows = []
        for t, rec in enumerate(records):
            for k in range(rec.shape[1]):
                rows.append([t, config.burn_in + k * dts] + [v for z in rec[:, k] for v in (z.real, z.imag)])
        hdr = ["trajectory", "t"] + [f"{n}_{c}" for n in ("a1", "a1p", "a2", "a2p") for c in ("re", "im")]
        out.table(hdr, rows, out.sibling(".traj.csv"))
    out.finish({"threads": sde.thread_count()})
    rate = stats.n_diverged / config.n_traj
    if rate > opts["max_divergence"]:
        print(f"error: divergence rate {rate:.3%} exceeds {opts['max_divergence']:.3%}; "
              "diverged trajectories were excluded from the averages", file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


COMMANDS = {
    "steady": cmd_steady,
    "stability": cmd_stability,
    "spectrum": cmd_spectrum,
    "scan-theta": cmd_scan_theta,
    "sde": cmd_sde,
}


# -- replay ---------------------------------------------------------------------

def replay_argv(manifest: dict, out) -> list:
    """Rebuild an explicit command line from a manifest's effective settings."""
    parser = build_parser()
    command = manifest["operation"]
    actions = _actions(parser, command)
    argv = [command]
    params = params_from_mapping(manifest["params"])
    for k in PARAM_KEYS:
        v = getattr(params, k)
        argv.append(f"--{k}={repr(v.real) if isinstance(v, complex) and v.imag == 0 else repr(v)}")
    for dest, v in manifest["config"].items():
        if dest not in actions or v is None:
            continue
        a = actions[dest]
        flag = a.option_strings[0]
        if isinstance(a, argparse._StoreTrueAction):
            if v:
                argv.append(flag)
        elif isinstance(v, list):
            argv += [flag, *map(repr, v)]
        else:
            argv.append(f"{flag}={repr(v) if isinstance(v, float) else v}")
    return argv + ["--out", str(out)]


def cmd_replay(args):
    mpath = Path(args.manifest)
    try:
        m = load_manifest(mpath)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read manifest {mpath}: {exc}", EXIT_INVALID)
    names = list(m["outputs"])
    if args.out:
        out = Path(args.out)
    else:
        p = Path(names[0])
        out = mpath.with_name(p.stem + ".replay" + p.suffix)
    argv = replay_argv(m, out)
    print("replaying: kerrcoupler " + " ".join(argv))
    code = main(argv)
    if code != EXIT_OK:
        return code
    fresh = load_manifest(manifest_path(out))["outputs"]
    same = list(fresh.values()) == list(m["outputs"].values())
    print("outputs identical to the manifest" if same else "outputs differ from the manifest")
    return EXIT_OK if same else EXIT_REPLAY_DIFFERS


# -- entry point -----------------------------------------------------------------

def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            return cmd_replay(args)
        params, opts = resolve(args, parser)
        opts["_out"] = args.out
        out = Output(args.command, argv, params, opts)
        code = COMMANDS[args.command](params, opts, out)
        if args.command != "sde":
            out.finish()
        return code
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ParameterError as exc:
        print(f"error: invalid parameters: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except steady.SteadyStateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except fluct.LinearizationError as exc:
        print(f"error: {exc}; use `kerrcoupler sde`", file=sys.stderr)
        return EXIT_LINEARIZATION
    except sde.SdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    raise SystemExit(main())
