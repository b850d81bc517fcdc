import hashlib
import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

NO_OBSERVATION = "none"
NO_PUBLIC_STATE = "-"
ROW_TOL = 1e-12

Labels = Tuple[str, ...]


class SpecParseError(ValueError):
    """Raised when a model file cannot be turned into a GameSpec."""
    def __init__(self, field: str, detail: str, path: Optional[Any] = None) -> None:
        where = f"{path}: " if path is not None else ""
        super().__init__(f"{where}{field}: {detail}")
        self.field = field
        self.detail = detail
        self.path = path


class SpecValidationError(RuntimeError):
    """Raised when a GameSpec violates the model assumptions."""
    def __init__(self, diagnostics: List[str]) -> None:
        super().__init__("Invalid game spec:\n  " + "\n  ".join(diagnostics))
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class GameSpec:
    """
    Finite-horizon game with asymmetric information.

    Time indices are 1-based in every accessor. Per-time tuples are stored
    0-based, so ``local_states[n][t - 1]`` is the alphabet of agent n at t.
    Transition quantities (local, observation and public kernels and the
    observation alphabets) exist for t = 1..T-1 only.

    Table layouts:
      local_kernel[n][t-1]  (X^n_t, A^1_t, ..., A^N_t, X^n_{t+1})
      obs_kernel[n][t-1]    (X^n_t, A^1_t, ..., A^N_t, Y^n_t)
      public_kernel[t-1]    (C_t, A^1_t, ..., A^N_t, C_{t+1})
      utility[n][t-1]       (C_t, X^1_t, ..., X^N_t, A^1_t, ..., A^N_t)
      admissible[n][t-1]    (X^n_t, A^n_t) boolean
    """
    name: str
    horizon: int
    num_agents: int
    public_states: Tuple[Labels, ...]
    local_states: Tuple[Tuple[Labels, ...], ...]
    actions: Tuple[Tuple[Labels, ...], ...]
    observations: Tuple[Tuple[Labels, ...], ...]
    admissible: Tuple[Tuple[np.ndarray, ...], ...]
    local_kernel: Tuple[Tuple[np.ndarray, ...], ...]
    obs_kernel: Tuple[Tuple[np.ndarray, ...], ...]
    public_kernel: Tuple[np.ndarray, ...]
    utility: Tuple[Tuple[np.ndarray, ...], ...]
    initial_local: Tuple[np.ndarray, ...]
    initial_public: np.ndarray
    initial_joint: Optional[np.ndarray] = None

    # ------------------------------------------------------------------ #
    # Alphabet sizes
    # ------------------------------------------------------------------ #
    @property
    def agents(self) -> range:
        return range(self.num_agents)

    def local_size(self, n: int, t: int) -> int:
        return len(self.local_states[n][t - 1])

    def action_size(self, n: int, t: int) -> int:
        return len(self.actions[n][t - 1])

    def obs_size(self, n: int, t: int) -> int:
        return len(self.observations[n][t - 1])

    def public_size(self, t: int) -> int:
        return len(self.public_states[t - 1])

    def local_shape(self, t: int) -> Tuple[int, ...]:
        return tuple(self.local_size(n, t) for n in self.agents)

    def action_shape(self, t: int) -> Tuple[int, ...]:
        return tuple(self.action_size(n, t) for n in self.agents)

    def obs_shape(self, t: int) -> Tuple[int, ...]:
        return tuple(self.obs_size(n, t) for n in self.agents)

    # ------------------------------------------------------------------ #
    # Admissibility
    # ------------------------------------------------------------------ #
    def admissible_actions(self, n: int, t: int, x: int) -> List[int]:
        return [int(a) for a in np.flatnonzero(self.admissible[n][t - 1][x])]

    def some_admissible(self, n: int, t: int) -> np.ndarray:
        """Actions of agent n admissible at some local state."""
        return self.admissible[n][t - 1].any(axis=0)

    def joint_action_profiles(self, t: int) -> List[Tuple[int, ...]]:
        """Joint actions whose every component is admissible at some local state."""
        per_agent = [np.flatnonzero(self.some_admissible(n, t)) for n in self.agents]
        return [tuple(int(a) for a in prof) for prof in itertools.product(*per_agent)]

    def joint_observation_profiles(self, t: int) -> List[Tuple[int, ...]]:
        return list(itertools.product(*(range(k) for k in self.obs_shape(t))))

    # ------------------------------------------------------------------ #
    # Structural queries
    # ------------------------------------------------------------------ #
    def is_symmetric(self) -> bool:
        """True for two-agent specs invariant under relabeling the agents."""
        if self.num_agents != 2:
            return False
        for t in range(1, self.horizon + 1):
            if self.local_states[0][t - 1] != self.local_states[1][t - 1]:
                return False
            if self.actions[0][t - 1] != self.actions[1][t - 1]:
                return False
            if not np.array_equal(self.admissible[0][t - 1], self.admissible[1][t - 1]):
                return False
            u1, u2 = self.utility[0][t - 1], self.utility[1][t - 1]
            if not np.array_equal(u2, u1.transpose(0, 2, 1, 4, 3)):
                return False
        for t in range(1, self.horizon):
            if self.observations[0][t - 1] != self.observations[1][t - 1]:
                return False
            for kernel in (self.local_kernel, self.obs_kernel):
                if not np.array_equal(kernel[1][t - 1], kernel[0][t - 1].transpose(0, 2, 1, 3)):
                    return False
            pk = self.public_kernel[t - 1]
            if not np.array_equal(pk, pk.transpose(0, 2, 1, 3)):
                return False
        return np.array_equal(self.initial_local[0], self.initial_local[1])

    def has_uncontrolled_beliefs(self) -> bool:
        """
        True when signaling-free belief propagation cannot depend on actions:
        action sets do not depend on the local state and neither the local
        nor the observation kernels depend on the action profile.
        """
        for n in self.agents:
            for t in range(1, self.horizon + 1):
                adm = self.admissible[n][t - 1]
                if not (adm == adm[:1]).all():
                    return False
            for t in range(1, self.horizon):
                mask = self._admissible_row_mask(n, t)
                mask = mask.reshape(mask.shape[0], -1)
                for kernel in (self.local_kernel[n][t - 1], self.obs_kernel[n][t - 1]):
                    flat = kernel.reshape(kernel.shape[0], -1, kernel.shape[-1])
                    for x in range(kernel.shape[0]):
                        rows = flat[x][mask[x]]
                        if len(rows) and not (rows == rows[0]).all():
                            return False
        return True

    def _admissible_row_mask(self, n: int, t: int) -> np.ndarray:
        """Mask over (x^n, a^1..a^N): own action admissible at x^n, others at some state."""
        own = self.admissible[n][t - 1]
        mask = own.reshape((own.shape[0],) + tuple(
            own.shape[1] if k == n else 1 for k in self.agents))
        for k in self.agents:
            if k == n:
                continue
            some = self.some_admissible(k, t)
            mask = mask & some.reshape((1,) + tuple(
                some.shape[0] if j == k else 1 for j in self.agents))
        return np.broadcast_to(mask, (own.shape[0],) + self.action_shape(t))


# ---------------------------------------------------------------------- #
# Parsing
# ---------------------------------------------------------------------- #
REQUIRED_SECTIONS = ["meta", "alphabets", "kernels", "utilities", "initial"]


def _per_time(node: Any, times: Sequence[int], field: str) -> List[Any]:
    """Expand a {"all": v} or {"1": v1, "2": v2, ...} node into one value per time."""
    if not times:
        return []
    if not isinstance(node, dict):
        raise SpecParseError(field, 'expected an object keyed by "all" or by time indices')
    if "all" in node:
        return [node["all"] for _ in times]
    values = []
    for t in times:
        if str(t) not in node:
            raise SpecParseError(field, f"missing entry for t={t}")
        values.append(node[str(t)])
    return values


def _dense(node: Any, shape: Tuple[int, ...], field: str) -> np.ndarray:
    """Nested lists (row-major) to a float array; null marks an omitted block."""
    if node is None:
        return np.zeros(shape)
    if not shape:
        try:
            return np.array(float(node))
        except (TypeError, ValueError):
            raise SpecParseError(field, f"expected a number, got {node!r}")
    if not isinstance(node, list) or len(node) != shape[0]:
        raise SpecParseError(field, f"expected a list of length {shape[0]}")
    return np.stack([_dense(child, shape[1:], f"{field}[{i}]") for i, child in enumerate(node)])


def _labels(node: Any, field: str, empty: Optional[str] = None) -> Labels:
    if node is None or (isinstance(node, list) and not node and empty is not None):
        if empty is None:
            raise SpecParseError(field, "alphabet is required")
        return (empty,)
    if not isinstance(node, list):
        raise SpecParseError(field, "alphabet must be a list of strings")
    return tuple(str(v) for v in node)


def spec_from_dict(data: Dict[str, Any], path: Optional[Any] = None) -> GameSpec:
    """Build a GameSpec from a parsed model file. Raises SpecParseError."""
    try:
        return _spec_from_dict(data)
    except SpecParseError as e:
        if path is not None and e.path is None:
            raise SpecParseError(e.field, e.detail, path) from None
        raise


def _spec_from_dict(data: Dict[str, Any]) -> GameSpec:
    if not isinstance(data, dict):
        raise SpecParseError("<root>", "model file must contain an object")
    missing = [key for key in REQUIRED_SECTIONS if key not in data]
    if missing:
        raise SpecParseError("<root>", f"missing sections: {missing}")

    meta = data["meta"]
    try:
        horizon = int(meta["horizon"])
        num_agents = int(meta["num_agents"])
    except (KeyError, TypeError, ValueError):
        raise SpecParseError("meta", "num_agents and horizon must be integers")
    name = str(meta.get("name", "game"))
    times = list(range(1, horizon + 1))
    steps = list(range(1, horizon))

    def per_agent(node: Any, field: str) -> List[Any]:
        if node is None:
            return [None] * num_agents
        if not isinstance(node, list) or len(node) != num_agents:
            raise SpecParseError(field, f"expected one entry per agent ({num_agents})")
        return node

    alph = data["alphabets"]
    public_node = alph.get("public_states")
    if public_node is None:
        public_states = tuple((NO_PUBLIC_STATE,) for _ in times)
    else:
        public_states = tuple(
            _labels(v, f"alphabets.public_states[t={t}]", NO_PUBLIC_STATE)
            for t, v in zip(times, _per_time(public_node, times, "alphabets.public_states")))

    local_states = tuple(
        tuple(_labels(v, f"alphabets.local_states[{n}][t={t}]")
              for t, v in zip(times, _per_time(node, times, f"alphabets.local_states[{n}]")))
        for n, node in enumerate(per_agent(alph.get("local_states"), "alphabets.local_states")))
    actions = tuple(
        tuple(_labels(v, f"alphabets.actions[{n}][t={t}]")
              for t, v in zip(times, _per_time(node, times, f"alphabets.actions[{n}]")))
        for n, node in enumerate(per_agent(alph.get("actions"), "alphabets.actions")))
    observations = tuple(
        tuple((NO_OBSERVATION,) for _ in steps) if node is None else
        tuple(_labels(v, f"alphabets.observations[{n}][t={t}]", NO_OBSERVATION)
              for t, v in zip(steps, _per_time(node, steps, f"alphabets.observations[{n}]")))
        for n, node in enumerate(per_agent(alph.get("observations"), "alphabets.observations")))

    # admissible_actions[n] : {time: {local label: [action labels]}}; omitted means all
    adm_nodes = per_agent(data.get("admissible_actions"), "admissible_actions")
    admissible = []
    for n in range(num_agents):
        per_t = []
        nodes = [None] * horizon if adm_nodes[n] is None else \
            _per_time(adm_nodes[n], times, f"admissible_actions[{n}]")
        for t, node in zip(times, nodes):
            xs, acts = local_states[n][t - 1], actions[n][t - 1]
            table = np.ones((len(xs), len(acts)), dtype=bool)
            if node is not None:
                field = f"admissible_actions[{n}][t={t}]"
                if not isinstance(node, dict):
                    raise SpecParseError(field, "expected an object keyed by local state")
                table[:] = False
                for x_label, allowed in node.items():
                    if x_label not in xs:
                        raise SpecParseError(field, f"unknown local state {x_label!r}")
                    for a_label in allowed:
                        if a_label not in acts:
                            raise SpecParseError(field, f"unknown action {a_label!r}")
                        table[xs.index(x_label), acts.index(a_label)] = True
            per_t.append(table)
        admissible.append(tuple(per_t))

    def action_shape(t: int) -> Tuple[int, ...]:
        return tuple(len(actions[k][t - 1]) for k in range(num_agents))

    kernels = data["kernels"]
    local_nodes = per_agent(kernels.get("local"), "kernels.local")
    local_kernel = []
    for n in range(num_agents):
        if local_nodes[n] is None and steps:
            raise SpecParseError(f"kernels.local[{n}]", "local kernel is required when horizon > 1")
        tables = _per_time(local_nodes[n], steps, f"kernels.local[{n}]") if steps else []
        local_kernel.append(tuple(
            _dense(node, (len(local_states[n][t - 1]),) + action_shape(t) + (len(local_states[n][t]),),
                   f"kernels.local[{n}][t={t}]")
            for t, node in zip(steps, tables)))

    obs_nodes = per_agent(kernels.get("observation"), "kernels.observation")
    obs_kernel = []
    for n in range(num_agents):
        per_t = []
        tables = [None] * len(steps) if obs_nodes[n] is None else \
            _per_time(obs_nodes[n], steps, f"kernels.observation[{n}]")
        for t, node in zip(steps, tables):
            shape = (len(local_states[n][t - 1]),) + action_shape(t) + (len(observations[n][t - 1]),)
            if node is None:
                if shape[-1] != 1:
                    raise SpecParseError(f"kernels.observation[{n}][t={t}]",
                                         "observation kernel is required for a non-trivial alphabet")
                per_t.append(np.ones(shape))
            else:
                per_t.append(_dense(node, shape, f"kernels.observation[{n}][t={t}]"))
        obs_kernel.append(tuple(per_t))

    public_node = kernels.get("public")
    public_kernel = []
    tables = [None] * len(steps) if public_node is None else _per_time(public_node, steps, "kernels.public")
    for t, node in zip(steps, tables):
        shape = (len(public_states[t - 1]),) + action_shape(t) + (len(public_states[t]),)
        if node is None:
            if shape[0] != 1 or shape[-1] != 1:
                raise SpecParseError(f"kernels.public[t={t}]",
                                     "public kernel is required for a non-trivial public alphabet")
            public_kernel.append(np.ones(shape))
        else:
            public_kernel.append(_dense(node, shape, f"kernels.public[t={t}]"))

    utility = []
    for n, node in enumerate(per_agent(data["utilities"], "utilities")):
        tables = _per_time(node, times, f"utilities[{n}]")
        utility.append(tuple(
            _dense(v, (len(public_states[t - 1]),)
                   + tuple(len(local_states[k][t - 1]) for k in range(num_agents))
                   + action_shape(t), f"utilities[{n}][t={t}]")
            for t, v in zip(times, tables)))

    initial = data["initial"]
    joint = None
    if "joint" in initial:
        shape = tuple(len(local_states[k][0]) for k in range(num_agents))
        joint = _dense(initial["joint"], shape, "initial.joint")
        initial_local = []
        for n in range(num_agents):
            axes = tuple(k for k in range(num_agents) if k != n)
            initial_local.append(joint.sum(axis=axes))
    else:
        initial_local = [
            _dense(v, (len(local_states[n][0]),), f"initial.local[{n}]")
            for n, v in enumerate(per_agent(initial.get("local"), "initial.local"))]
    public_prior = initial.get("public")
    if public_prior is None:
        if len(public_states[0]) != 1:
            raise SpecParseError("initial.public", "prior is required for a non-trivial public alphabet")
        initial_public = np.ones(1)
    else:
        initial_public = _dense(public_prior, (len(public_states[0]),), "initial.public")

    spec = GameSpec(
        name=name,
        horizon=horizon,
        num_agents=num_agents,
        public_states=public_states,
        local_states=local_states,
        actions=actions,
        observations=observations,
        admissible=tuple(admissible),
        local_kernel=tuple(local_kernel),
        obs_kernel=tuple(obs_kernel),
        public_kernel=tuple(public_kernel),
        utility=tuple(utility),
        initial_local=tuple(initial_local),
        initial_public=initial_public,
        initial_joint=joint,
    )
    return freeze(spec)


def freeze(spec: GameSpec) -> GameSpec:
    """Mark every table read-only so the spec can be shared across workers."""
    arrays = [spec.initial_public, *spec.initial_local, *spec.public_kernel]
    for group in (spec.admissible, spec.local_kernel, spec.obs_kernel, spec.utility):
        for per_t in group:
            arrays.extend(per_t)
    if spec.initial_joint is not None:
        arrays.append(spec.initial_joint)
    for arr in arrays:
        arr.flags.writeable = False
    return spec


# ---------------------------------------------------------------------- #
# Serialization
# ---------------------------------------------------------------------- #
def _time_node(values: Sequence[Any]) -> Dict[str, Any]:
    if values and all(v == values[0] for v in values[1:]):
        return {"all": values[0]}
    return {str(t): v for t, v in enumerate(values, start=1)}


def spec_to_dict(spec: GameSpec) -> Dict[str, Any]:
    """Inverse of spec_from_dict, writing explicit tables for every section."""
    n_range = spec.agents
    admissible = []
    for n in n_range:
        per_t = []
        for t in range(1, spec.horizon + 1):
            xs, acts = spec.local_states[n][t - 1], spec.actions[n][t - 1]
            table = spec.admissible[n][t - 1]
            per_t.append({x: [acts[a] for a in np.flatnonzero(table[i])] for i, x in enumerate(xs)})
        admissible.append(_time_node(per_t))

    data: Dict[str, Any] = {
        "meta": {"name": spec.name, "num_agents": spec.num_agents, "horizon": spec.horizon},
        "alphabets": {
            "public_states": _time_node([list(c) for c in spec.public_states]),
            "local_states": [_time_node([list(x) for x in spec.local_states[n]]) for n in n_range],
            "actions": [_time_node([list(a) for a in spec.actions[n]]) for n in n_range],
        },
        "admissible_actions": admissible,
        "kernels": {},
        "utilities": [_time_node([u.tolist() for u in spec.utility[n]]) for n in n_range],
        "initial": {
            "local": [p.tolist() for p in spec.initial_local],
            "public": spec.initial_public.tolist(),
        },
    }
    if spec.horizon > 1:
        data["alphabets"]["observations"] = [
            _time_node([list(y) for y in spec.observations[n]]) for n in n_range]
        data["kernels"] = {
            "local": [_time_node([k.tolist() for k in spec.local_kernel[n]]) for n in n_range],
            "observation": [_time_node([k.tolist() for k in spec.obs_kernel[n]]) for n in n_range],
            "public": _time_node([k.tolist() for k in spec.public_kernel]),
        }
    if spec.initial_joint is not None:
        data["initial"]["joint"] = spec.initial_joint.tolist()
    return data


def spec_fingerprint(spec: GameSpec) -> str:
    canonical = json.dumps(spec_to_dict(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------- #
# Validation
# ---------------------------------------------------------------------- #
def _label_of(spec: GameSpec, t: int, index: Tuple[int, ...]) -> str:
    return "(" + ", ".join(spec.actions[k][t - 1][a] for k, a in enumerate(index)) + ")"


def _check_rows(kernel: np.ndarray, mask: np.ndarray, describe, name: str) -> List[str]:
    sums = kernel.sum(axis=-1)
    negative = (kernel < 0).any(axis=-1)
    non_finite = ~np.isfinite(kernel).all(axis=-1)
    bad = mask & ((np.abs(sums - 1.0) > ROW_TOL) | negative | non_finite)
    out = []
    for idx in np.argwhere(bad):
        idx = tuple(int(i) for i in idx)
        if non_finite[idx]:
            out.append(f"{name} row {describe(idx)} has non-finite entries")
            continue
        out.append(f"{name} row {describe(idx)} sums to {sums[idx]:.15g}"
                   + (" and has negative entries" if negative[idx] else ""))
    return out


def _check_distribution(p: np.ndarray, name: str) -> List[str]:
    if not np.isfinite(p).all():
        return [f"{name} has non-finite entries"]
    if (p < 0).any() or abs(p.sum() - 1.0) > ROW_TOL:
        return [f"{name} is not a probability distribution (sum {p.sum():.15g})"]
    return []


def validate_spec(spec: GameSpec) -> List[str]:
    """Return every violated model assumption; an empty list means valid."""
    diag: List[str] = []
    if spec.horizon < 1:
        diag.append("horizon must be >= 1")
    if spec.num_agents < 1:
        diag.append("num_agents must be >= 1")
    if diag:
        return diag

    for t in range(1, spec.horizon + 1):
        if not spec.public_states[t - 1]:
            diag.append(f"empty public state alphabet at t={t}")
        for n in spec.agents:
            for kind, alphabet in (("local state", spec.local_states[n][t - 1]),
                                   ("action", spec.actions[n][t - 1])):
                if not alphabet:
                    diag.append(f"empty {kind} alphabet for agent {n + 1} at t={t}")
                elif len(set(alphabet)) != len(alphabet):
                    diag.append(f"duplicate {kind} labels for agent {n + 1} at t={t}")
            adm = spec.admissible[n][t - 1]
            for x in np.flatnonzero(~adm.any(axis=1)):
                diag.append(f"empty admissible action set for agent {n + 1} at t={t}, "
                            f"x={spec.local_states[n][t - 1][x]}")
    if diag:
        return diag

    for t in range(1, spec.horizon):
        for n in spec.agents:
            mask = spec._admissible_row_mask(n, t)
            xs = spec.local_states[n][t - 1]

            def describe(idx, n=n, t=t, xs=xs):
                return f"(n={n + 1}, t={t}, x={xs[idx[0]]}, a={_label_of(spec, t, idx[1:])})"

            diag += _check_rows(spec.local_kernel[n][t - 1], mask, describe, "local kernel")
            diag += _check_rows(spec.obs_kernel[n][t - 1], mask, describe, "observation kernel")
        some = np.ones((spec.public_size(t),) + spec.action_shape(t), dtype=bool)
        for k in spec.agents:
            s = spec.some_admissible(k, t)
            some = some & s.reshape((1,) + tuple(s.shape[0] if j == k else 1 for j in spec.agents))

        def describe_public(idx, t=t):
            return f"(t={t}, c={spec.public_states[t - 1][idx[0]]}, a={_label_of(spec, t, idx[1:])})"

        diag += _check_rows(spec.public_kernel[t - 1], some, describe_public, "public kernel")

    for n in spec.agents:
        for t in range(1, spec.horizon + 1):
            if not np.isfinite(spec.utility[n][t - 1]).all():
                diag.append(f"non-finite utility for agent {n + 1} at t={t}")
        diag += _check_distribution(spec.initial_local[n], f"initial prior of agent {n + 1}")
    diag += _check_distribution(spec.initial_public, "initial public prior")

    if spec.initial_joint is not None and not np.isfinite(spec.initial_joint).all():
        diag.append("initial joint prior has non-finite entries")
    elif spec.initial_joint is not None:
        product = spec.initial_local[0]
        for n in range(1, spec.num_agents):
            product = np.multiply.outer(product, spec.initial_local[n])
        if np.abs(product - spec.initial_joint).max() > ROW_TOL:
            diag.append("initial prior is not product-form across agents: the primitive "
                        "random variables must be mutually independent")
    return diag


# ---------------------------------------------------------------------- #
# Random instances
# ---------------------------------------------------------------------- #
def random_spec(seed: int, num_agents: int = 2, horizon: int = 3, num_states: int = 2,
                num_actions: int = 2, num_observations: int = 2,
                state_dependent_actions: bool = False, name: str = "random") -> GameSpec:
    """Seeded random instance with dense Dirichlet kernels and uniform utilities."""
    rng = np.random.default_rng(seed)
    xs = tuple(str(i) for i in range(num_states))
    acts = tuple(f"a{i}" for i in range(num_actions))
    ys = tuple(f"y{i}" for i in range(num_observations))
    a_shape = (num_actions,) * num_agents

    def rows(shape):
        return rng.dirichlet(np.ones(shape[-1]), size=shape[:-1])

    admissible = []
    for _ in range(num_agents):
        per_t = []
        for _ in range(horizon):
            table = np.ones((num_states, num_actions), dtype=bool)
            if state_dependent_actions:
                for x in range(num_states):
                    keep = rng.random(num_actions) < 0.6
                    keep[rng.integers(num_actions)] = True
                    table[x] = keep
            per_t.append(table)
        admissible.append(tuple(per_t))

    spec = GameSpec(
        name=name,
        horizon=horizon,
        num_agents=num_agents,
        public_states=tuple((NO_PUBLIC_STATE,) for _ in range(horizon)),
        local_states=tuple(tuple(xs for _ in range(horizon)) for _ in range(num_agents)),
        actions=tuple(tuple(acts for _ in range(horizon)) for _ in range(num_agents)),
        observations=tuple(tuple(ys for _ in range(horizon - 1)) for _ in range(num_agents)),
        admissible=tuple(admissible),
        local_kernel=tuple(tuple(rows((num_states,) + a_shape + (num_states,))
                                 for _ in range(horizon - 1)) for _ in range(num_agents)),
        obs_kernel=tuple(tuple(rows((num_states,) + a_shape + (num_observations,))
                               for _ in range(horizon - 1)) for _ in range(num_agents)),
        public_kernel=tuple(np.ones((1,) + a_shape + (1,)) for _ in range(horizon - 1)),
        utility=tuple(tuple(rng.uniform(-1.0, 1.0, (1,) + (num_states,) * num_agents + a_shape)
                            for _ in range(horizon)) for _ in range(num_agents)),
        initial_local=tuple(rng.dirichlet(np.ones(num_states)) for _ in range(num_agents)),
        initial_public=np.ones(1),
    )
    return freeze(spec)


# ---------------------------------------------------------------------- #
# Manager
# ---------------------------------------------------------------------- #
class ModelManager:
    """
    Loads, validates and saves model files.

    Model files live in the ``model`` directory next to the package unless a
    path is given explicitly. See model/about_model_file.txt for the schema.
    """

    def __init__(self, model_dir: Optional[Any] = None) -> None:
        self.model_dir = Path(model_dir) if model_dir is not None else self._default_model_dir()
        self.logger = logging.getLogger("ModelManager")

    def _default_model_dir(self) -> Path:
        return Path(__file__).resolve().parent.parent.parent / "model"

    def resolve(self, path: Any) -> Path:
        path = Path(path)
        if not path.exists() and not path.is_absolute() and (self.model_dir / path).exists():
            return self.model_dir / path
        return path

    def load_spec(self, path: Any) -> GameSpec:
        path = self.resolve(path)
        if not path.exists():
            raise SpecParseError("<file>", "model file not found", path)
        try:
            with path.open("r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise SpecParseError(f"line {e.lineno}, column {e.colno}", e.msg, path)

        spec = spec_from_dict(data, path)
        diagnostics = validate_spec(spec)
        if diagnostics:
            raise SpecValidationError(diagnostics)
        self.logger.info(f"Loaded spec '{spec.name}' from {path} "
                         f"(N={spec.num_agents}, T={spec.horizon})")
        return spec

    def save_spec(self, spec: GameSpec, path: Any) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            json.dump(spec_to_dict(spec), f, indent=1)
        self.logger.info(f"Saved spec '{spec.name}' to {path}")
        return path
