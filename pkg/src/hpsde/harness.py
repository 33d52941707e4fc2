"""End-to-end hierarchical policy search loop, baseline and trace output.

One run alternates: compute normalized return-weighted importance of every
stored sample, (optionally) embed the joint points, fit the weighted
variational mixture to discover option structure, refit each surviving option
policy on its assigned samples, refit the GP return model, then roll out a
batch of episodes whose option is chosen by the gating rule. Behavior-policy
densities are recorded when samples are collected, never recomputed later.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import HpsdeConfig
from .core import Dataset, InvalidInputError, RngStream
from .embed import laplacian_eigenmaps
from .envs import Environment, make_env
from .gating import (
    GpHyper,
    gate_scores_batch,
    gp_fit,
    gp_optimize_hypers,
    select_options_batch,
    softmax_probs_from_means,
)
from .mixest import MixturePriors, assign_options, default_priors, fit_weighted_vbem, prune_clusters
from .optpolicy import GaussianOptionPolicy, update_option_policy
from .weighting import ReturnTransform, effective_sample_size, importance_weights, mixture_old_density

__all__ = [
    "IterationRecord", "LearningTrace", "RunResult",
    "run_hpsde", "run_baseline_monolithic",
    "write_outputs", "parse_trace_csv", "save_policy_bundle", "load_policy_bundle",
    "evaluate_policy_bundle",
]

log = logging.getLogger(__name__)

# stream-id layout: purpose * 1e12 + iteration * 1e6 + rollout index
_S_CONTEXT, _S_GATE, _S_XI, _S_VBEM = 1, 2, 3, 4


def _stream(cfg_seed: int, purpose: int, iteration: int = 0, j: int = 0) -> np.random.Generator:
    return RngStream(cfg_seed, purpose * 10**12 + iteration * 10**6 + j).generator()


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    mean_return: float
    n_options: int
    ess: float
    wall_ms: int
    n_samples: int
    option_sample_counts: tuple[int, ...] = ()
    option_mean_returns: tuple[float, ...] = ()


@dataclass
class LearningTrace:
    records: list[IterationRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["iter,mean_return,n_options,ess,wall_ms"]
        for r in self.records:
            lines.append(f"{r.iteration},{r.mean_return!r},{r.n_options},{r.ess!r},{r.wall_ms}")
        return "\n".join(lines) + "\n"

    def to_jsonl(self) -> str:
        out = []
        for r in self.records:
            out.append(json.dumps({
                "iter": r.iteration,
                "mean_return": r.mean_return,
                "n_options": r.n_options,
                "ess": r.ess,
                "wall_ms": r.wall_ms,
                "n_samples": r.n_samples,
                "option_sample_counts": list(r.option_sample_counts),
                "option_mean_returns": list(r.option_mean_returns),
            }))
        return "\n".join(out) + "\n"

    @property
    def final_mean_return(self) -> float:
        return self.records[-1].mean_return

    @property
    def final_n_options(self) -> int:
        return self.records[-1].n_options


def parse_trace_csv(text: str) -> LearningTrace:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if not lines or lines[0] != "iter,mean_return,n_options,ess,wall_ms":
        raise InvalidInputError("unrecognized trace header")
    records = []
    for ln in lines[1:]:
        it, mr, no, ess, wall = ln.split(",")
        records.append(IterationRecord(
            iteration=int(it), mean_return=float(mr), n_options=int(no),
            ess=float(ess), wall_ms=int(wall), n_samples=0,
        ))
    return LearningTrace(records)


@dataclass
class RunResult:
    config: HpsdeConfig
    trace: LearningTrace
    policies: list[GaussianOptionPolicy]
    gp_hyper: GpHyper
    env: Environment
    dataset: Dataset


def _initial_rollouts(cfg: HpsdeConfig, env: Environment):
    n = cfg.n_initial
    ctx_rng = _stream(cfg.seed, _S_CONTEXT, 0)
    contexts = np.array([env.sample_context(ctx_rng) for _ in range(n)])
    params = np.array([
        env.sample_initial_param(_stream(cfg.seed, _S_XI, 0, j)) for j in range(n)
    ])
    returns = _evaluate_batch(env, contexts, params, cfg.threads)
    dens = np.full(n, env.initial_param_density())
    return contexts, params, returns, dens


def _evaluate_batch(env: Environment, contexts, params, threads: int) -> np.ndarray:
    n = len(contexts)
    out = np.empty(n)
    if threads > 1:
        def work(j):
            return env.evaluate(contexts[j], params[j])[0]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for j, r in enumerate(pool.map(work, range(n))):
                out[j] = r
    else:
        for j in range(n):
            out[j] = env.evaluate(contexts[j], params[j])[0]
    return out


def _median_distance(Z: np.ndarray, cap: int = 400) -> float:
    """Median pairwise distance of standardized rows (deterministic subsample)."""
    Zs = (Z - Z.mean(axis=0)) / np.maximum(Z.std(axis=0), 1e-12)
    if len(Zs) > cap:
        Zs = Zs[:: int(np.ceil(len(Zs) / cap))]
    d2 = np.sum((Zs[:, None, :] - Zs[None, :, :]) ** 2, axis=2)
    vals = np.sqrt(d2[np.triu_indices(len(Zs), 1)])
    med = float(np.median(vals))
    return med if med > 0 else 1.0


def _nearest_prev_policy(policies, s_bar, xi_bar):
    """Previous policy whose predicted mean at the cluster's mean context is closest."""
    if not policies:
        return None
    dists = [float(np.linalg.norm(p.mean(s_bar) - xi_bar)) for p in policies]
    return policies[int(np.argmin(dists))]


def _mixture_priors(cfg: HpsdeConfig, points, weights) -> MixturePriors:
    mc = cfg.mixture
    d = points.shape[1]
    nu0 = mc.nu0 if mc.nu0 is not None else float(d + 2)
    if mc.k0_scale is not None:
        K0 = np.eye(d) / mc.k0_scale
        return MixturePriors(alpha0=mc.alpha0, beta0=mc.beta0, nu0=nu0, K0=K0)
    base = default_priors(points, weights, alpha0=mc.alpha0, beta0=mc.beta0)
    return MixturePriors(alpha0=mc.alpha0, beta0=mc.beta0, nu0=nu0, K0=base.K0)


def _record(cfg, iteration, returns_new, n_options, counts, opt_means, ess, t0, n_samples):
    wall = int(round((time.perf_counter() - t0) * 1000.0)) if cfg.record_wall_time else 0
    return IterationRecord(
        iteration=iteration,
        mean_return=float(np.mean(returns_new)),
        n_options=n_options,
        ess=float(ess),
        wall_ms=wall,
        n_samples=n_samples,
        option_sample_counts=tuple(int(c) for c in counts),
        option_mean_returns=tuple(None if m is None else float(m) for m in opt_means),
    )


def run_hpsde(cfg: HpsdeConfig) -> RunResult:
    """Run the full hierarchical policy search loop for ``cfg.iterations``."""
    env = make_env(cfg.env, cfg.env_overrides)
    fmap = env.default_feature_map()
    transform = ReturnTransform(cfg.transform.kind, beta=cfg.transform.beta)

    t0 = time.perf_counter()
    contexts, params, returns, dens = _initial_rollouts(cfg, env)
    densities = list(dens)
    ds = Dataset(contexts, params, returns)

    iw0 = importance_weights(returns, dens, transform, clip=cfg.transform.clip)
    trace = LearningTrace()
    trace.records.append(_record(
        cfg, 0, returns, 1, [len(returns)], [float(np.mean(returns))],
        effective_sample_size(iw0.normalized), t0, len(ds),
    ))

    policies: list[GaussianOptionPolicy] = []
    gp_hyper = GpHyper(cfg.gp.init_l, cfg.gp.init_sigma_f, cfg.gp.init_sigma_n)
    gate_mode = cfg.gating.mode.lower()

    for it in range(1, cfg.iterations + 1):
        t_iter = time.perf_counter()

        # importance weights over the replay window
        lo = 0 if cfg.window is None else max(0, len(ds) - cfg.window)
        R_win = ds.returns[lo:]
        dens_win = np.asarray(densities[lo:])
        iw = importance_weights(R_win, dens_win, transform, clip=cfg.transform.clip)
        ess = effective_sample_size(iw.normalized)

        # option structure from weighted density estimation; per-dim
        # standardization keeps k-means++ seeding and the isotropic prior
        # meaningful when context and parameter scales differ widely
        joint = np.hstack([ds.contexts[lo:], ds.params[lo:]])
        joint_std = (joint - joint.mean(axis=0)) / np.maximum(joint.std(axis=0), 1e-12)
        fit_points, fit_weights = joint_std, iw.normalized
        row_map = np.arange(len(joint))
        if cfg.embedding.enabled:
            emb = laplacian_eigenmaps(joint_std, cfg.embedding.to_embedding_config())
            fit_points = emb.points
            row_map = emb.indices
            fit_weights = iw.normalized[row_map]

        priors = _mixture_priors(cfg, fit_points, fit_weights)
        state = fit_weighted_vbem(
            fit_points, fit_weights, m_max=cfg.o_max, priors=priors,
            tol=cfg.mixture.tol, max_iter=cfg.mixture.max_iter,
            rng=_stream(cfg.seed, _S_VBEM, it),
        )
        assign = assign_options(state)
        survivors = prune_clusters(state, cfg.mixture.prune_min_rel_mass)

        # per-option policy updates on assigned samples
        ctx_win = ds.contexts[lo:][row_map]
        par_win = ds.params[lo:][row_map]
        ret_win = ds.returns[lo:][row_map]
        new_policies = []
        for l in survivors:
            mask = assign == l
            if not np.any(mask):
                continue
            prev = _nearest_prev_policy(
                policies, ctx_win[mask].mean(axis=0), par_win[mask].mean(axis=0)
            )
            pol = update_option_policy(
                ctx_win[mask], par_win[mask], ret_win[mask],
                method=cfg.option_update.method, fmap=fmap, prev_policy=prev,
                beta=cfg.option_update.beta, epsilon=cfg.option_update.epsilon,
                ridge=cfg.option_update.ridge, cov_floor=cfg.option_update.cov_floor,
                min_samples=cfg.option_update.min_samples,
            )
            # clusters too small to fit fall back to the previous policy;
            # keep at most one copy of any object so options stay distinct
            if pol is not None and not any(pol is q for q in new_policies):
                new_policies.append(pol)
        if new_policies:
            policies = new_policies
        elif policies:
            log.warning("iteration %d: keeping previous option policies", it)
        else:
            # degenerate first fit (every cluster under the sample minimum):
            # fall back to one monolithic policy over the whole window
            log.warning("iteration %d: no cluster was large enough; fitting one option on all samples", it)
            pol = update_option_policy(
                ctx_win, par_win, ret_win,
                method=cfg.option_update.method, fmap=fmap, prev_policy=None,
                beta=cfg.option_update.beta, epsilon=cfg.option_update.epsilon,
                ridge=cfg.option_update.ridge, cov_floor=cfg.option_update.cov_floor,
                min_samples=cfg.option_update.min_samples,
            )
            if pol is None:
                raise InvalidInputError(
                    f"iteration {it}: no option could be fit; increase rollouts_per_iter"
                )
            policies = [pol]

        # GP return model on the most recent samples
        gp_lo = max(0, len(ds) - cfg.gp.n_max)
        Z = np.hstack([ds.params[gp_lo:], ds.contexts[gp_lo:]])
        R_gp = ds.returns[gp_lo:]
        if cfg.gp.hyper_opt_iters > 0 and (it == 1 or (it - 1) % cfg.gp.hyper_opt_every == 0):
            l_bounds = None
            if cfg.gp.l_min_scale is not None:
                l_bounds = (cfg.gp.l_min_scale * _median_distance(Z), 1e4)
            gp_hyper = gp_optimize_hypers(Z, R_gp, gp_hyper, iters=cfg.gp.hyper_opt_iters,
                                          l_bounds=l_bounds)
        gp = gp_fit(Z, R_gp, gp_hyper)

        # rollout batch under the gating rule
        ctx_rng = _stream(cfg.seed, _S_CONTEXT, it)
        new_ctx = np.array([env.sample_context(ctx_rng) for _ in range(cfg.rollouts_per_iter)])
        scores, score_sds = gate_scores_batch(policies, gp, new_ctx, with_variance=(gate_mode == "ucb"))
        if gate_mode == "greedy":
            picks = np.argmax(scores, axis=1)
        elif gate_mode == "ucb":
            picks = np.argmax(scores + cfg.gating.kappa * score_sds, axis=1)
        else:
            gate_probs = softmax_probs_from_means(scores, cfg.gating.temperature)
            gate_rng = _stream(cfg.seed, _S_GATE, it)
            picks = np.array([
                gate_rng.choice(len(policies), p=gate_probs[j]) for j in range(len(new_ctx))
            ])
        new_par = np.array([
            policies[picks[j]].sample(new_ctx[j], _stream(cfg.seed, _S_XI, it, j))
            for j in range(len(new_ctx))
        ])
        new_ret = _evaluate_batch(env, new_ctx, new_par, cfg.threads)
        for j in range(len(new_ctx)):
            if gate_mode == "softmax":
                densities.append(
                    mixture_old_density(policies, gate_probs[j], new_ctx[j], new_par[j])
                )
            else:
                densities.append(policies[picks[j]].density(new_ctx[j], new_par[j]))
        ds = Dataset(
            np.vstack([ds.contexts, new_ctx]),
            np.vstack([ds.params, new_par]),
            np.concatenate([ds.returns, new_ret]),
        )

        counts = [int(np.sum(assign == l)) for l in survivors]
        opt_means = [
            float(new_ret[picks == o].mean()) if np.any(picks == o) else None
            for o in range(len(policies))
        ]
        trace.records.append(_record(
            cfg, it, new_ret, len(policies), counts, opt_means, ess, t_iter, len(ds),
        ))

    return RunResult(config=cfg, trace=trace, policies=policies,
                     gp_hyper=gp_hyper, env=env, dataset=ds)


def run_baseline_monolithic(cfg: HpsdeConfig) -> RunResult:
    """Same loop with a single option and greedy gating: a monolithic policy."""
    mono = replace(cfg, o_max=1, gating=replace(cfg.gating, mode="greedy"))
    return run_hpsde(mono)


def write_outputs(result: RunResult, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "trace_csv": out / "trace.csv",
        "trace_jsonl": out / "trace.jsonl",
        "policies": out / "policies.json",
    }
    paths["trace_csv"].write_text(result.trace.to_csv())
    paths["trace_jsonl"].write_text(result.trace.to_jsonl())
    save_policy_bundle(result, paths["policies"])
    return paths


def _fmap_to_dict(fmap) -> dict:
    d = {"kind": fmap.kind, "in_dim": fmap.in_dim, "bias": fmap.bias}
    if fmap.kind == "se":
        d["centers"] = fmap.centers.tolist()
        d["bandwidth"] = fmap.bandwidth.tolist()
    return d


def _fmap_from_dict(d: dict):
    from .core import FeatureMap
    if d["kind"] == "se":
        return FeatureMap("se", d["in_dim"], np.array(d["centers"]),
                          np.array(d["bandwidth"]), d["bias"])
    return FeatureMap("linear", d["in_dim"])


def save_policy_bundle(result: RunResult, path: str | Path) -> None:
    """Serialize option policies, gating hyperparameters and the GP training set.

    Policy gain matrices are stored row-major; covariances as the lower
    triangle of their Cholesky-consistent symmetric form, row by row.
    """
    cfg = result.config
    ds = result.dataset
    gp_lo = max(0, len(ds) - cfg.gp.n_max)
    Z = np.hstack([ds.params[gp_lo:], ds.contexts[gp_lo:]])
    bundle = {
        "version": 1,
        "env": cfg.env,
        "config": cfg.to_dict(),
        "feature_map": _fmap_to_dict(result.policies[0].fmap) if result.policies else None,
        "options": [
            {
                "weights": p.weights.tolist(),
                "cov_lower": p.cov[np.tril_indices(p.d_xi)].tolist(),
            }
            for p in result.policies
        ],
        "gp": {
            "hyper": {"l": result.gp_hyper.l, "sigma_f": result.gp_hyper.sigma_f,
                      "sigma_n": result.gp_hyper.sigma_n},
            "z": Z.tolist(),
            "r": ds.returns[gp_lo:].tolist(),
        },
    }
    Path(path).write_text(json.dumps(bundle))


def load_policy_bundle(path: str | Path):
    """Rebuild (config, policies, gp model) from a saved bundle."""
    try:
        bundle = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidInputError(f"cannot read policy bundle {path}: {e}") from e
    cfg = HpsdeConfig.from_dict(bundle["config"])
    fmap = _fmap_from_dict(bundle["feature_map"]) if bundle["feature_map"] else None
    policies = []
    for opt in bundle["options"]:
        W = np.array(opt["weights"])
        d_xi = W.shape[1]
        cov = np.zeros((d_xi, d_xi))
        cov[np.tril_indices(d_xi)] = opt["cov_lower"]
        cov = cov + np.tril(cov, -1).T
        policies.append(GaussianOptionPolicy(W, cov, fmap))
    hyper = GpHyper(**bundle["gp"]["hyper"])
    gp = gp_fit(np.array(bundle["gp"]["z"]), np.array(bundle["gp"]["r"]), hyper)
    return cfg, policies, gp


def evaluate_policy_bundle(path: str | Path, n_contexts: int = 100, seed: int = 0) -> dict:
    """Replay a saved bundle on fresh contexts; returns summary statistics."""
    cfg, policies, gp = load_policy_bundle(path)
    if not policies:
        raise InvalidInputError("policy bundle holds no options")
    env = make_env(cfg.env, cfg.env_overrides)
    ctx_rng = RngStream(seed, 900).generator()
    contexts = np.array([env.sample_context(ctx_rng) for _ in range(n_contexts)])
    picks = select_options_batch(
        policies, gp, contexts, mode="greedy",
        kappa=cfg.gating.kappa, temperature=cfg.gating.temperature,
    )
    returns = np.array([
        env.evaluate(contexts[j], policies[picks[j]].mean(contexts[j]))[0]
        for j in range(n_contexts)
    ])
    return {
        "env": cfg.env,
        "n_contexts": n_contexts,
        "mean_return": float(returns.mean()),
        "std_return": float(returns.std()),
        "option_usage": np.bincount(picks, minlength=len(policies)).tolist(),
    }
