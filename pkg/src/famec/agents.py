"""D3QN (discrete user agents), TD3 and DDPG (continuous base-station agents)."""

from __future__ import annotations

import copy

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


def mlp(in_dim, hidden, out_dim, act=nn.ReLU):
    layers, d = [], in_dim
    for h in hidden:
        layers += [nn.Linear(d, h), act()]
        d = h
    layers.append(nn.Linear(d, out_dim))
    return nn.Sequential(*layers)


def dueling_aggregate(value, advantage, mode="identifiable"):
    """Q = V + A - mean(A), or the unidentified V + A in ``plain`` mode.

    value has shape (..., 1) (or is scalar), advantage (..., n_actions).
    Works on numpy arrays and torch tensors alike.
    """
    if advantage.shape[-1] == 0:
        raise ValueError("advantage vector is empty")
    if mode == "plain":
        return value + advantage
    if mode != "identifiable":
        raise ValueError(f"unknown dueling mode {mode!r}")
    if torch.is_tensor(advantage):
        return value + advantage - advantage.mean(dim=-1, keepdim=True)
    advantage = np.asarray(advantage, dtype=float)
    return np.asarray(value, dtype=float) + advantage - advantage.mean(axis=-1, keepdims=True)


class QNetwork(nn.Module):
    """Dueling head on a ReLU trunk."""

    def __init__(self, state_dim, n_actions, hidden=(64, 128, 64), mode="identifiable"):
        super().__init__()
        self.mode = mode
        layers, d = [], state_dim
        for h in hidden:
            layers += [nn.Linear(d, h), nn.ReLU()]
            d = h
        self.trunk = nn.Sequential(*layers)
        self.value = nn.Linear(d, 1)
        self.advantage = nn.Linear(d, n_actions)

    def forward(self, s):
        z = self.trunk(s)
        return dueling_aggregate(self.value(z), self.advantage(z), self.mode)


class Actor(nn.Module):
    def __init__(self, state_dim, act_dim, hidden=(64, 128, 64)):
        super().__init__()
        self.net = mlp(state_dim, hidden, act_dim, act=nn.Sigmoid)

    def forward(self, s):
        return torch.tanh(self.net(s))


class Critic(nn.Module):
    def __init__(self, state_dim, act_dim, hidden=(64, 128, 64)):
        super().__init__()
        self.net = mlp(state_dim + act_dim, hidden, 1, act=nn.Sigmoid)

    def forward(self, s, a):
        return self.net(torch.cat([s, a], dim=-1)).squeeze(-1)


# --- targets (pure; inputs are next-state value estimates) -------------------

def _backend(x):
    return torch if torch.is_tensor(x) else np


def d3qn_target(reward, q_online_next, q_target_next, done, discount):
    """Double-Q target: action from the online net, value from the target net."""
    xp = _backend(q_target_next)
    if xp is torch:
        a_star = q_online_next.argmax(dim=-1, keepdim=True)
        nxt = q_target_next.gather(-1, a_star).squeeze(-1)
    else:
        q_online_next = np.asarray(q_online_next, dtype=float)
        a_star = np.argmax(q_online_next, axis=-1)
        nxt = np.take_along_axis(np.asarray(q_target_next, dtype=float),
                                 a_star[..., None], axis=-1)[..., 0]
    return reward + discount * (1.0 - done) * nxt


def td3_target(reward, q1_next, q2_next, done, discount):
    xp = _backend(q1_next)
    return reward + discount * (1.0 - done) * xp.minimum(q1_next, q2_next)


def ddpg_target(reward, q1_next, done, discount):
    return reward + discount * (1.0 - done) * q1_next


@torch.no_grad()
def soft_update(train, target, tau):
    """target <- tau * train + (1 - tau) * target, in place."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    src = list(train.parameters())
    dst = list(target.parameters())
    if len(src) != len(dst) or any(a.shape != b.shape for a, b in zip(src, dst)):
        raise ValueError("soft update between networks of different shape")
    for a, b in zip(src, dst):
        b.mul_(1.0 - tau).add_(a, alpha=tau)
    return target


# --- replay and exploration --------------------------------------------------

class ReplayBuffer:
    """FIFO ring buffer with uniform sampling."""

    def __init__(self, capacity, rng=None):
        self.capacity = int(capacity)
        self.rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self._data = None
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def _alloc(self, fields):
        self._data = {k: np.zeros((self.capacity,) + np.shape(v), dtype=np.float32
                                  if k != "action" or np.asarray(v).dtype.kind == "f" else np.int64)
                      for k, v in fields.items()}

    def add(self, state, action, reward, next_state, done=False):
        fields = dict(state=state, action=action, reward=reward, next_state=next_state,
                      done=float(done))
        for k, v in fields.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite {k} in transition")
        if self._data is None:
            self._alloc(fields)
        for k, v in fields.items():
            self._data[k][self._next] = v
        self._next = (self._next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size):
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} < batch {batch_size} transitions")
        idx = self.rng.integers(0, self.size, size=batch_size)
        return {k: torch.as_tensor(v[idx]) for k, v in self._data.items()}

    def contents(self):
        """Stored transitions oldest first (for inspection)."""
        if self.size < self.capacity:
            order = np.arange(self.size)
        else:
            order = (np.arange(self.capacity) + self._next) % self.capacity
        return {k: v[order] for k, v in self._data.items()} if self._data else {}


def linear_schedule(epoch, start, end, decay_epochs):
    if decay_epochs <= 0:
        return end
    frac = min(max(epoch, 0) / decay_epochs, 1.0)
    return start + frac * (end - start)


def epsilon_at(epoch, params):
    return linear_schedule(epoch, params.eps_start, params.eps_end, params.eps_decay_epochs)


def select_discrete(q_values, eps, rng, n_valid=None):
    """Epsilon-greedy over the first ``n_valid`` actions."""
    q_values = np.asarray(q_values, dtype=float)
    n = q_values.shape[-1] if n_valid is None else n_valid
    if n < 1:
        raise ValueError("empty action set")
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {eps}")
    if eps > 0 and rng.random() < eps:
        return int(rng.integers(n))
    return int(np.argmax(q_values[:n]))


def select_continuous(state, actor, noise_scale, rng):
    with torch.no_grad():
        mu = actor(torch.as_tensor(np.asarray(state, dtype=np.float32))).double().numpy()
    if noise_scale < 0:
        raise ValueError("noise scale must be nonnegative")
    if noise_scale == 0:
        return np.clip(mu, -1.0, 1.0)
    return np.clip(mu + rng.normal(0.0, noise_scale, size=mu.shape), -1.0, 1.0)


# --- agents -----------------------------------------------------------------

def _step(opt, loss, params, clip):
    opt.zero_grad()
    loss.backward()
    if clip:
        nn.utils.clip_grad_norm_(params, clip)
    opt.step()


class D3QNAgent:
    def __init__(self, state_dim, n_actions, params):
        self.params = params
        self.n_actions = n_actions
        self.online = QNetwork(state_dim, n_actions, params.hidden, params.dueling_mode)
        self.target = copy.deepcopy(self.online)
        self.opt = torch.optim.Adam(self.online.parameters(), lr=params.lr)

    def q_values(self, state):
        with torch.no_grad():
            return self.online(torch.as_tensor(np.asarray(state, dtype=np.float32))).double().numpy()

    def act(self, state, eps, rng):
        return select_discrete(self.q_values(state), eps, rng)

    def update(self, batch, reward_scale=1.0):
        s, a, s2 = batch["state"], batch["action"].long(), batch["next_state"]
        r, d = batch["reward"] * reward_scale, batch["done"]
        with torch.no_grad():
            y = d3qn_target(r, self.online(s2), self.target(s2), d, self.params.discount)
        q = self.online(s).gather(-1, a[:, None]).squeeze(-1)
        loss = F.mse_loss(q, y)
        _step(self.opt, loss, self.online.parameters(), self.params.grad_clip)
        soft_update(self.online, self.target, self.params.tau)
        return loss.item()


class ActorCriticTeam:
    """Cooperating deterministic-policy agents sharing one state and reward.

    Each agent owns an actor for its slice of the joint action and critics
    over the full joint action.  ``twin`` selects TD3 (clipped double-Q)
    versus DDPG targets.
    """

    def __init__(self, state_dim, slice_dims, params, twin=True):
        self.params = params
        self.twin = twin
        self.dims = list(slice_dims)
        self.bounds = np.cumsum([0] + self.dims)
        joint = int(self.bounds[-1])
        h = params.hidden
        self.actors = [Actor(state_dim, d, h) for d in self.dims]
        self.critics = [[Critic(state_dim, joint, h) for _ in range(2 if twin else 1)]
                        for _ in self.dims]
        self.actor_targets = [copy.deepcopy(a) for a in self.actors]
        self.critic_targets = [[copy.deepcopy(c) for c in cs] for cs in self.critics]
        self.actor_opts = [torch.optim.Adam(a.parameters(), lr=params.lr) for a in self.actors]
        self.critic_opts = [torch.optim.Adam([p for c in cs for p in c.parameters()], lr=params.lr)
                            for cs in self.critics]
        self.updates = 0

    @property
    def action_dim(self):
        return int(self.bounds[-1])

    def act(self, state, noise_scale, rng):
        return np.concatenate([select_continuous(state, a, noise_scale, rng) for a in self.actors])

    def _joint(self, actors, s):
        return torch.cat([a(s) for a in actors], dim=-1)

    def update(self, batch, reward_scale=1.0):
        p = self.params
        s, a, s2 = batch["state"], batch["action"].float(), batch["next_state"]
        r, d = batch["reward"] * reward_scale, batch["done"]
        with torch.no_grad():
            a2 = self._joint(self.actor_targets, s2)
            if p.td3_extras and self.twin:
                a2 = (a2 + (0.2 * torch.randn_like(a2)).clamp(-0.5, 0.5)).clamp(-1, 1)
        losses = []
        for i, (cs, cts) in enumerate(zip(self.critics, self.critic_targets)):
            with torch.no_grad():
                if self.twin:
                    y = td3_target(r, cts[0](s2, a2), cts[1](s2, a2), d, p.discount)
                else:
                    y = ddpg_target(r, cts[0](s2, a2), d, p.discount)
            loss = sum(F.mse_loss(c(s, a), y) for c in cs)
            _step(self.critic_opts[i], loss, [q for c in cs for q in c.parameters()], p.grad_clip)
            losses.append(loss.item() / len(cs))
        self.updates += 1
        if p.td3_extras and self.twin and self.updates % 2:
            return float(np.mean(losses))
        for i, actor in enumerate(self.actors):
            lo, hi = self.bounds[i], self.bounds[i + 1]
            joint = torch.cat([a[:, :lo], actor(s), a[:, hi:]], dim=-1)
            loss = -self.critics[i][0](s, joint).mean()
            _step(self.actor_opts[i], loss, actor.parameters(), p.grad_clip)
        for net, tgt in zip(self.actors, self.actor_targets):
            soft_update(net, tgt, p.tau)
        for cs, cts in zip(self.critics, self.critic_targets):
            for c, ct in zip(cs, cts):
                soft_update(c, ct, p.tau)
        return float(np.mean(losses))

    def modules(self, prefix):
        out = {}
        for i, a in enumerate(self.actors):
            out[f"{prefix}.actor{i}"] = a
            for j, c in enumerate(self.critics[i]):
                out[f"{prefix}.critic{i}_{j}"] = c
        return out
