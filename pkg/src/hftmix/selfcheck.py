"""Quick internal consistency checks run by ``hftmix selfcheck``.

Each check returns a dict with at least ``name`` and ``passed``.
"""

from __future__ import annotations

import numpy as np

from .backtest import metrics
from .env import EnvConfig
from .hyper_agent import HyperAgent, HyperBatch, HyperConfig
from .neural import grad_check, softmax
from .optimal_q import brute_force_q, dp_optimal_q
from .sub_agent import Batch, SubAgent, SubAgentConfig

GRAD_STEPS = (1e-5, 1e-6, 1e-7)


def random_sub_batch(agent: SubAgent, size: int, rng: np.random.Generator) -> Batch:
    ns, nc = agent.n_single, agent.n_context
    return Batch(
        s1=rng.standard_normal((size, ns)), s2=rng.standard_normal((size, nc)),
        pos=rng.integers(0, 2, size), action=rng.integers(0, 2, size), reward=rng.standard_normal(size),
        s1_next=rng.standard_normal((size, ns)), s2_next=rng.standard_normal((size, nc)),
        pos_next=rng.integers(0, 2, size), done=rng.random(size) < 0.2,
        p_star=softmax(rng.standard_normal((size, 2))),
    )


def random_hyper_batch(agent: HyperAgent, size: int, rng: np.random.Generator) -> HyperBatch:
    n_state, n = agent.online.enc.n_in, agent.n_agents
    q_mem = rng.standard_normal(size)
    q_mem[rng.random(size) < 0.3] = np.nan
    return HyperBatch(
        state=rng.standard_normal((size, n_state)), ctx=rng.standard_normal((size, 2)),
        pos=rng.integers(0, 2, size), q_sub=rng.standard_normal((size, n, 2)),
        action=rng.integers(0, 2, size), reward=rng.standard_normal(size),
        state_next=rng.standard_normal((size, n_state)), ctx_next=rng.standard_normal((size, 2)),
        pos_next=rng.integers(0, 2, size), q_sub_next=rng.standard_normal((size, n, 2)),
        done=rng.random(size) < 0.2, p_star=softmax(rng.standard_normal((size, 2))), q_memory=q_mem,
    )


def perturb(module, rng: np.random.Generator, scale: float = 0.05):
    for p in module.parameters():
        p.value += scale * rng.standard_normal(p.value.shape)


def check_sub_gradients(seed: int = 0, batch: int = 8, max_entries: int = 12, tolerance: float = 1e-4) -> dict:
    rng = np.random.default_rng(seed)
    agent = SubAgent(33, 17, SubAgentConfig(seed=seed, alpha_l=1.0))
    perturb(agent.target, rng)
    b = random_sub_batch(agent, batch, rng)
    rep = grad_check(agent.online.parameters(), lambda bw: agent.loss(b, backward=bw),
                     tolerance=tolerance, h=GRAD_STEPS, max_entries=max_entries, seed=seed)
    return {"name": "sub_agent_grad", "passed": rep.passed, "max_rel_error": rep.max_rel_error, "worst": rep.worst}


def check_hyper_gradients(seed: int = 0, batch: int = 8, max_entries: int = 12, tolerance: float = 1e-4) -> dict:
    rng = np.random.default_rng(seed)
    agent = HyperAgent(50, 6, HyperConfig(seed=seed, beta=1.0))
    perturb(agent.target, rng)
    b = random_hyper_batch(agent, batch, rng)
    rep = grad_check(agent.online.parameters(), lambda bw: agent.loss(b, backward=bw),
                     tolerance=tolerance, h=GRAD_STEPS, max_entries=max_entries, seed=seed)
    return {"name": "hyper_agent_grad", "passed": rep.passed, "max_rel_error": rep.max_rel_error, "worst": rep.worst}


def check_dp(n_segments: int = 30, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_segments):
        T = int(rng.integers(2, 11))
        closes = 100 + np.cumsum(rng.standard_normal(T))
        cfg = EnvConfig(fee_rate=float(rng.uniform(0, 1e-3)))
        g = float(rng.choice([0.0, 0.9, 1.0]))
        worst = max(worst, float(np.max(np.abs(dp_optimal_q(closes, cfg, g).q - brute_force_q(closes, cfg, g).q))))
    return {"name": "dp_vs_brute_force", "passed": worst <= 1e-9, "max_abs_error": worst}


def check_metrics() -> dict:
    m1 = metrics([100.0, 101.0, 100.0])
    m2 = metrics([100.0, 100.0, 100.0])
    m3 = metrics([100.0, 110.0])
    ok = (abs(m1["TR"]) < 1e-12 and abs(m1["MDD"] - 1 / 101) < 1e-12
          and m2["ASR"] is None and m2["ACR"] is None and m2["ASoR"] is None and m2["AVOL"] == 0.0
          and abs(m3["TR"] - 0.1) < 1e-12 and m3["ASR"] is None)
    return {"name": "metric_examples", "passed": bool(ok)}


def run_all(seed: int = 0) -> list[dict]:
    return [check_sub_gradients(seed), check_hyper_gradients(seed), check_dp(seed=seed), check_metrics()]
