"""Named experiment presets; each expands to one or more run configs.

Preset ids follow the figure numbering of the experiment suite the CLI
reproduces (one-group densities, entropy decay curves, over-entropy spikes,
travelling waves); parameters live here so reruns are reproducible without
external files.
"""

DEFAULTS = {
    "scheme": "dg",
    "a": 0.0,
    "b": 1.0,
    "d": 1e-4,
    "dt": 1.0 / 3.0,
    "eps": 0.0,
    "p": 1,
    "c_inv": 0.0,  # 0 -> inverse-trace oracle value for the degree
    "quad_points": 8,
    "newton_tol": 1e-10,
    "newton_stall_tol": 1e-8,
    "newton_max_iter": 250,
    "newton_max_halvings": 30,
    "floor": 1e-16,
    "reaction": True,
    "seed": 0,
    "u0": "one-group:0.8",
    "snapshots": (),
    "early_window": 1.0 / 3.0,
    "late_window": 1.0 / 3.0,
}


def _runs(common, *variants):
    out = []
    for name, extra in variants:
        cfg = dict(DEFAULTS)
        cfg.update(common)
        cfg.update(extra)
        cfg["name"] = name
        out.append(cfg)
    return out


PRESETS = {
    # P1 in the density variable: negativity failure of the standard scheme
    "fig1": _runs(
        dict(kind="fem-negativity", scheme="fem-u", d=1e-4, dt=1.0 / 6.0,
             n_steps=120, u0="one-group:0.8",
             snapshots=(0, 20, 40, 60, 90, 120)),
        ("n20", dict(n_el=20)),
        ("n40", dict(n_el=40)),
    ),
    # P1 in the log density: positive by construction
    "fig2": _runs(
        dict(kind="one-group", scheme="fem-lambda", d=1e-4, dt=1.0 / 6.0,
             n_steps=120, u0="one-group:0.8",
             snapshots=(0, 20, 40, 60, 90, 120)),
        ("n20", dict(n_el=20)),
        ("n40", dict(n_el=40)),
    ),
    # DG in the log density, one group at height 0.8, orders 1..3
    "fig3": _runs(
        dict(kind="one-group", n_el=40, n_steps=60, u0="one-group:0.8",
             snapshots=(0, 6, 12, 24, 42, 60)),
        ("p1", dict(p=1)),
        ("p2", dict(p=2)),
        ("p3", dict(p=3)),
        ("ref-fem300", dict(scheme="fem-lambda", n_el=300)),
    ),
    # same with height 1.0 (bounds 0 <= u <= 1 preserved)
    "fig4": _runs(
        dict(kind="one-group", n_el=40, n_steps=60, u0="one-group:1.0",
             snapshots=(0, 6, 12, 24, 42, 60)),
        ("p1", dict(p=1)),
        ("p2", dict(p=2)),
        ("p3", dict(p=3)),
        ("ref-fem300", dict(scheme="fem-lambda", n_el=300)),
    ),
    # entropy decay, semi-log; late window sits in the reaction-driven phase
    "fig5-left": _runs(
        dict(kind="entropy-decay", n_el=40, n_steps=60, u0="one-group:1.0",
             snapshots=(0, 60)),
        ("run", {}),
    ),
    # pure diffusion: mass conserved, entropy settles at s(mean) |Omega|
    "fig5-right": _runs(
        dict(kind="pure-diffusion", n_el=40, d=1e-2, n_steps=120,
             u0="one-group:1.0", reaction=False, snapshots=(0, 120)),
        ("run", {}),
    ),
    # over-entropy spikes: S0 = log n >= |Omega| for n > e
    "fig6": _runs(
        dict(kind="entropy-decay-overmass", n_el=36, n_steps=180,
             snapshots=(0, 180)),
        ("n3", dict(u0="spike:3")),
        ("n6", dict(u0="spike:6")),
        ("n12", dict(u0="spike:12")),
    ),
    # travelling wave at D = 1: DG on two meshes, P1-in-u, ODE reference
    "fig7": _runs(
        dict(kind="traveling-wave", a=0.0, b=40.0, d=1.0, n_steps=30,
             u0="wave:2.0", snapshots=(0, 10, 20, 30)),
        ("dg-n50", dict(n_el=50)),
        ("dg-n80", dict(n_el=80)),
        ("fem-n50", dict(scheme="fem-u", n_el=50)),
        ("ode-ref", dict(scheme="ode", n_el=50)),
    ),
    # one implicit Euler step from a smooth datum on nested meshes
    "refinement-study": _runs(
        dict(kind="refinement-study", d=1.0, dt=0.1, n_steps=1, u0="cosine",
             snapshots=(0, 1)),
        ("n10", dict(n_el=10)),
        ("n20", dict(n_el=20)),
        ("n40", dict(n_el=40)),
        ("n80", dict(n_el=80)),
    ),
}


def preset_names():
    return sorted(PRESETS)


def expand_preset(name):
    if name not in PRESETS:
        raise KeyError(f"unknown preset '{name}' (see list-presets)")
    return [dict(cfg) for cfg in PRESETS[name]]
