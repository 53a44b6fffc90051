"""Shared test oracles and fixtures, kept independent of the code they check."""

import numpy as np


def smoke_config(seed=0, tasks=("REACH3",), unseen=()):
    """Minutes-scale pipeline config for smoke and determinism tests."""
    from prefloop.config import desk_profile

    cfg = desk_profile(seed=seed)
    cfg.train_tasks = list(tasks)
    cfg.unseen_tasks = list(unseen)
    cfg.n_policies = 2
    cfg.base_updates = 12
    cfg.finetune_updates = 6
    cfg.checkpoint_interval = 12
    cfg.trajectories_per_checkpoint = 2
    cfg.prefs_per_task = 20
    cfg.success_filter = 0.0
    cfg.eval_episodes = 2
    cfg.eval_pairs = 20
    cfg.unseen_seeds = 1
    cfg.ppo.num_envs = 8
    cfg.rm.epochs = 30
    cfg.rm.batch_size = 32
    cfg.rm.eval_interval = 10
    cfg.rm.hidden = (32, 16)
    cfg.rm.pairs_per_record = 4
    cfg.oracle.not_sure_margin = 0.0  # tiny runs need every pair decisive
    return cfg


def finite_difference_grads(loss_fn, params, h=1e-5, probe_limit=None):
    """Central finite differences of loss_fn() wrt each array in `params`.

    Mutates entries in place and restores them. probe_limit caps the number of
    probed entries per block (None probes everything).
    """
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        idx = range(flat_p.size)
        if probe_limit is not None:
            idx = range(min(probe_limit, flat_p.size))
        for j in idx:
            orig = flat_p[j]
            flat_p[j] = orig + h
            up = loss_fn()
            flat_p[j] = orig - h
            down = loss_fn()
            flat_p[j] = orig
            flat_g[j] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rel_tol=1e-4, abs_floor=1e-7,
                       probe_limit=None):
    """Relative-error check with an absolute floor for near-zero entries."""
    assert len(analytic) == len(numeric)
    for a, n in zip(analytic, numeric):
        fa = a.reshape(-1)
        fn = n.reshape(-1)
        count = fa.size if probe_limit is None else min(probe_limit, fa.size)
        for j in range(count):
            denom = max(abs(fa[j]), abs(fn[j]))
            if denom < abs_floor:
                continue
            rel = abs(fa[j] - fn[j]) / denom
            assert rel < rel_tol, f"grad mismatch: {fa[j]} vs {fn[j]} (rel {rel})"
