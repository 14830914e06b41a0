"""Agent network as an undirected graph with neighborhood queries.

The combine step of every algorithm works on the neighborhood of an agent,
either including the agent itself (diffusion) or excluding it (consensus).
Neighbor lists are always returned in ascending id order so floating-point
reductions downstream are reproducible.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DisconnectedGraphError,
    GenerationFailedError,
    InvalidAgentIdError,
    SelfLoopError,
)

Edge = tuple[int, int]


@dataclass(frozen=True)
class Topology:
    """Validated, immutable undirected agent graph.

    Construct through :func:`build_topology` (or one of the generators),
    which checks ids, rejects self-loops and verifies connectivity.
    """

    num_agents: int
    edges: frozenset[Edge]
    _adjacency: tuple[tuple[int, ...], ...] = field(repr=False)

    def neighborhood(self, agent_id: int, include_self: bool = True) -> list[int]:
        """Neighbors of an agent, ascending; with the agent itself if asked."""
        if not 0 <= agent_id < self.num_agents:
            raise InvalidAgentIdError(
                f"agent id {agent_id} out of range for {self.num_agents} agents"
            )
        neighbors = list(self._adjacency[agent_id])
        if include_self:
            neighbors.append(agent_id)
            neighbors.sort()
        return neighbors

    def degree(self, agent_id: int) -> int:
        if not 0 <= agent_id < self.num_agents:
            raise InvalidAgentIdError(
                f"agent id {agent_id} out of range for {self.num_agents} agents"
            )
        return len(self._adjacency[agent_id])


def build_topology(num_agents: int, edges) -> Topology:
    """Validate an edge list and return a connected Topology.

    Edges are unordered agent-id pairs. Self-loops are rejected; the
    self-inclusive neighborhood is handled by the accessor, not the edge
    set. Duplicate edges (in either orientation) are rejected.
    """
    if num_agents < 1:
        raise ValueError(f"num_agents must be >= 1, got {num_agents}")
    normalized: set[Edge] = set()
    for k, j in edges:
        k, j = int(k), int(j)
        if k == j:
            raise SelfLoopError(f"edge ({k}, {j}) is a self-loop")
        for node in (k, j):
            if not 0 <= node < num_agents:
                raise InvalidAgentIdError(
                    f"edge ({k}, {j}) references agent {node}, valid ids are 0..{num_agents - 1}"
                )
        pair = (min(k, j), max(k, j))
        if pair in normalized:
            raise ValueError(f"duplicate edge {pair}")
        normalized.add(pair)

    adjacency: list[list[int]] = [[] for _ in range(num_agents)]
    for k, j in normalized:
        adjacency[k].append(j)
        adjacency[j].append(k)
    adjacency_t = tuple(tuple(sorted(nbrs)) for nbrs in adjacency)

    _check_connected(num_agents, adjacency_t)
    return Topology(num_agents, frozenset(normalized), adjacency_t)


def _check_connected(num_agents: int, adjacency) -> None:
    """Breadth-first traversal from agent 0 must reach every agent."""
    seen = [False] * num_agents
    seen[0] = True
    frontier = [0]
    reached = 1
    while frontier:
        nxt = []
        for node in frontier:
            for nbr in adjacency[node]:
                if not seen[nbr]:
                    seen[nbr] = True
                    reached += 1
                    nxt.append(nbr)
        frontier = nxt
    if reached != num_agents:
        missing = [i for i, s in enumerate(seen) if not s]
        raise DisconnectedGraphError(
            f"graph is disconnected; agents {missing} unreachable from agent 0"
        )


def line_topology(num_agents: int) -> Topology:
    """Path graph 0-1-...-(N-1)."""
    return build_topology(num_agents, [(i, i + 1) for i in range(num_agents - 1)])


def ring_topology(num_agents: int) -> Topology:
    if num_agents < 3:
        return line_topology(num_agents)
    edges = [(i, (i + 1) % num_agents) for i in range(num_agents)]
    return build_topology(num_agents, edges)


def full_topology(num_agents: int) -> Topology:
    edges = [(i, j) for i in range(num_agents) for j in range(i + 1, num_agents)]
    return build_topology(num_agents, edges)


def generate_random_geometric(
    num_agents: int, radius: float, seed: int, max_attempts: int = 64
) -> Topology:
    """Random geometric graph in the unit square, retried until connected.

    Agents are placed uniformly; pairs within `radius` are connected. Each
    retry derives a fresh child seed from (seed, attempt), so the result is
    a pure function of (num_agents, radius, seed).
    """
    if num_agents < 1:
        raise ValueError(f"num_agents must be >= 1, got {num_agents}")
    if not 0.0 < radius <= 1.0:
        raise ValueError(f"radius must lie in (0, 1], got {radius}")
    for attempt in range(max_attempts):
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), attempt)))
        points = rng.random((num_agents, 2))
        diff = points[:, None, :] - points[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        edges = [
            (i, j)
            for i in range(num_agents)
            for j in range(i + 1, num_agents)
            if dist[i, j] <= radius
        ]
        try:
            return build_topology(num_agents, edges)
        except DisconnectedGraphError:
            continue
    raise GenerationFailedError(
        f"no connected geometric graph with N={num_agents}, radius={radius} "
        f"after {max_attempts} attempts (seed {seed})"
    )


def load_edge_list(path) -> Topology:
    """Read the edge-list text format: first line N, then one `k j` per line.

    `#` starts a comment (whole line or trailing); blank lines are skipped.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = []
        for raw in fh:
            stripped = raw.split("#", 1)[0].strip()
            if stripped:
                lines.append(stripped)
    if not lines:
        raise ValueError(f"{path}: empty edge-list file")
    try:
        num_agents = int(lines[0])
    except ValueError:
        raise ValueError(f"{path}: first line must be the agent count, got {lines[0]!r}") from None
    edges = []
    for line in lines[1:]:
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}: expected `k j` pair, got {line!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return build_topology(num_agents, edges)


def from_descriptor(descriptor: str, seed: int = 0) -> Topology:
    """Build a topology from a CLI-style descriptor.

    Supported forms: `line:N`, `ring:N`, `full:N`, `rgg:N:RADIUS[:SEED]`,
    or a path to an edge-list file. The `seed` argument is used only by
    `rgg` descriptors that do not pin their own seed.
    """
    head, _, rest = descriptor.partition(":")
    if head == "line" and rest:
        return line_topology(int(rest))
    if head == "ring" and rest:
        return ring_topology(int(rest))
    if head == "full" and rest:
        return full_topology(int(rest))
    if head == "rgg" and rest:
        parts = rest.split(":")
        if len(parts) == 2:
            return generate_random_geometric(int(parts[0]), float(parts[1]), seed)
        if len(parts) == 3:
            return generate_random_geometric(int(parts[0]), float(parts[1]), int(parts[2]))
        raise ValueError(f"bad rgg descriptor {descriptor!r}, want rgg:N:RADIUS[:SEED]")
    if os.path.exists(descriptor):
        return load_edge_list(descriptor)
    raise ValueError(
        f"unknown topology {descriptor!r}: want line:N, ring:N, full:N, "
        "rgg:N:RADIUS[:SEED], or an edge-list file path"
    )
