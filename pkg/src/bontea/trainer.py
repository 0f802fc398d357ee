"""Tabular softmax post-training loop for qualitative advantage-rule checks.

A toy task is a fixed reward table over (prompt, action) pairs; the policy is
one logit vector per prompt. Each step samples a prompt batch, draws m actions
per prompt, converts rewards to advantages with the configured rule, and
ascends theta along the advantage-weighted score direction minus a
KL-to-reference penalty:

    theta <- theta + gamma * (1/P) sum_p [ (1/m) sum_i A_i S_i - beta grad KL ].

Everything is exact at this scale: the score is one-hot(a) - softmax(theta),
the KL term is computed from the two distributions in closed form, and the
best-of-N value of a policy can be enumerated for small V and N.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from .advantages import RULE_NAMES, RuleParams, compute_rule, with_group_seed
from .bon_eval import BonCurve, grouped_bon_curve
from .errors import DegenerateError, InputError

#: Training aborts once any logit magnitude passes this guard.
LOGIT_GUARD = 1e4


@dataclass(frozen=True)
class ToyTask:
    """Fixed reward table (n_prompts, n_actions) plus reference logits."""

    rewards: np.ndarray
    reference_logits: np.ndarray

    def __post_init__(self) -> None:
        rewards = np.asarray(self.rewards, dtype=float)
        ref = np.asarray(self.reference_logits, dtype=float)
        if rewards.ndim != 2 or rewards.shape[1] < 4:
            raise InputError("reward table must be (n_prompts, n_actions) with n_actions >= 4")
        if ref.shape != rewards.shape:
            raise InputError("reference logits must match the reward table shape")
        if not (np.isfinite(rewards).all() and np.isfinite(ref).all()):
            raise InputError("reward table and reference logits must be finite")
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "reference_logits", ref)

    @property
    def n_prompts(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]

    @classmethod
    def random(
        cls, n_prompts: int = 8, n_actions: int = 32, seed: int = 0, reward_scale: float = 1.0
    ) -> "ToyTask":
        """Gaussian reward table with a uniform reference policy."""
        rng = np.random.default_rng(seed)
        rewards = reward_scale * rng.standard_normal((n_prompts, n_actions))
        return cls(rewards=rewards, reference_logits=np.zeros_like(rewards))


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters; ``rule`` is any registered advantage rule."""

    rule: str = "tea"
    params: RuleParams = field(default_factory=RuleParams)
    m: int = 64
    p_batch: int = 4
    beta: float = 0.0
    gamma: float = 0.1
    steps: int = 200
    seed: int = 0
    eval_n: tuple[int, ...] = (1, 8, 128)
    eval_every: int = 20
    eval_samples: int = 512

    def __post_init__(self) -> None:
        if self.rule not in RULE_NAMES:
            raise InputError(f"unknown rule {self.rule!r}; expected one of {RULE_NAMES}")
        if self.m < 2 or self.p_batch < 1 or self.steps < 0 or self.eval_every < 1:
            raise InputError("m >= 2, p_batch >= 1, steps >= 0, eval_every >= 1 required")
        if self.beta < 0 or not np.isfinite(self.beta):
            raise InputError(f"beta must be finite and >= 0, got {self.beta}")
        if self.gamma < 0 or not np.isfinite(self.gamma):
            raise InputError(f"gamma must be finite and >= 0, got {self.gamma}")
        if any(n < 1 for n in self.eval_n):
            raise InputError("eval budgets must be positive")


@dataclass(frozen=True)
class TrajectoryPoint:
    """One logged evaluation: step index, mean KL, mean reward, bo_N values."""

    step: int
    kl: float
    mean_reward: float
    bon: dict[int, float]


@dataclass(frozen=True)
class TrainResult:
    thetas: np.ndarray
    trajectory: list[TrajectoryPoint]
    config: TrainConfig


def policy_logprob_grad(theta: np.ndarray, action: int) -> np.ndarray:
    """Gradient of log softmax(theta)[action]: one-hot(action) - softmax(theta)."""
    theta = np.asarray(theta, dtype=float)
    if not 0 <= action < theta.size:
        raise IndexError(f"action {action} out of range for {theta.size} logits")
    grad = -softmax(theta)
    grad[action] += 1.0
    return grad


def kl_value(theta: np.ndarray, theta_ref: np.ndarray) -> float:
    """KL(softmax(theta) || softmax(theta_ref)), exact."""
    log_p = log_softmax(np.asarray(theta, dtype=float))
    log_q = log_softmax(np.asarray(theta_ref, dtype=float))
    return float(np.exp(log_p) @ (log_p - log_q))


def kl_grad(theta: np.ndarray, theta_ref: np.ndarray) -> np.ndarray:
    """Gradient of KL(softmax(theta) || softmax(theta_ref)) in theta.

    Componentwise p_a [ (log p_a - log q_a) - KL ]; zero at theta = theta_ref
    and orthogonal to the all-ones direction like every softmax gradient.
    """
    log_p = log_softmax(np.asarray(theta, dtype=float))
    log_q = log_softmax(np.asarray(theta_ref, dtype=float))
    p = np.exp(log_p)
    diff = log_p - log_q
    return p * (diff - p @ diff)


def evaluate_policy_bon(
    task: ToyTask,
    thetas: np.ndarray,
    n_budgets: tuple[int, ...],
    samples_per_prompt: int,
    seed: int | np.random.SeedSequence = 0,
) -> BonCurve:
    """Monte Carlo grouped best-of-N of the policy on the task's reward table."""
    rng = np.random.default_rng(seed)
    thetas = np.asarray(thetas, dtype=float)
    probs = softmax(thetas, axis=1)
    samples = np.empty((task.n_prompts, samples_per_prompt))
    for x in range(task.n_prompts):
        actions = rng.choice(task.n_actions, size=samples_per_prompt, p=probs[x])
        samples[x] = task.rewards[x, actions]
    return grouped_bon_curve(samples, n_budgets)


def enumerate_policy_bon(task: ToyTask, thetas: np.ndarray, n: int) -> np.ndarray:
    """Exact per-prompt E[max of n draws] by summing over all V^n tuples."""
    if task.n_actions**n > 300_000:
        raise InputError(f"enumeration over {task.n_actions}^{n} tuples is too large")
    probs = softmax(np.asarray(thetas, dtype=float), axis=1)
    out = np.zeros(task.n_prompts)
    for x in range(task.n_prompts):
        for actions in itertools.product(range(task.n_actions), repeat=n):
            weight = np.prod(probs[x, list(actions)])
            out[x] += weight * task.rewards[x, list(actions)].max()
    return out


def _prompt_gradient(
    task: ToyTask,
    thetas: np.ndarray,
    prompt: int,
    config: TrainConfig,
    params: RuleParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """(1/m) sum_i A_i (one-hot(a_i) - pi) for one sampled prompt."""
    p = softmax(thetas[prompt])
    actions = rng.choice(task.n_actions, size=config.m, p=p)
    rewards = task.rewards[prompt, actions]
    adv = compute_rule(config.rule, rewards, params).values
    grad = np.bincount(actions, weights=adv, minlength=task.n_actions) / config.m
    return grad - adv.mean() * p


def train(task: ToyTask, config: TrainConfig) -> TrainResult:
    """Run the prompt-batch ascent loop; logs an evaluation every eval_every steps.

    The trajectory always contains the initial policy (step 0) and the final
    one. Raises ``DegenerateError`` if any logit magnitude exceeds 1e4.
    """
    if config.p_batch > task.n_prompts:
        raise InputError(
            f"p_batch={config.p_batch} exceeds the task's {task.n_prompts} prompts"
        )
    thetas = task.reference_logits.copy()
    root = np.random.SeedSequence(config.seed)
    train_stream, eval_stream = root.spawn(2)
    rng = np.random.default_rng(train_stream)
    eval_children = eval_stream.spawn(config.steps + 1)

    def log_point(step: int) -> TrajectoryPoint:
        probs = softmax(thetas, axis=1)
        mean_reward = float((probs * task.rewards).sum(axis=1).mean())
        kl = float(
            np.mean([kl_value(thetas[x], task.reference_logits[x]) for x in range(task.n_prompts)])
        )
        curve = evaluate_policy_bon(
            task, thetas, config.eval_n, config.eval_samples, seed=eval_children[step]
        )
        bon = {int(n): float(v) for n, v in zip(curve.n_values, curve.means)}
        return TrajectoryPoint(step=step, kl=kl, mean_reward=mean_reward, bon=bon)

    trajectory = [log_point(0)]
    for step in range(1, config.steps + 1):
        prompts = rng.choice(task.n_prompts, size=config.p_batch, replace=False)
        update = np.zeros_like(thetas)
        for prompt in prompts:
            params = with_group_seed(config.params, step * task.n_prompts + int(prompt))
            grad = _prompt_gradient(task, thetas, int(prompt), config, params, rng)
            if config.beta > 0:
                grad = grad - config.beta * kl_grad(thetas[prompt], task.reference_logits[prompt])
            update[prompt] += grad
        thetas = thetas + config.gamma * update / config.p_batch
        if np.abs(thetas).max() > LOGIT_GUARD:
            raise DegenerateError(f"training diverged at step {step}: |logit| > {LOGIT_GUARD:g}")
        if step % config.eval_every == 0 or step == config.steps:
            trajectory.append(log_point(step))
    return TrainResult(thetas=thetas, trajectory=trajectory, config=config)
