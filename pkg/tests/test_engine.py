import numpy as np
import pytest

from difflearn.data import BatchSampler, ShardedDataset, concat_datasets, make_synthetic
from difflearn.engine import (
    AgentState,
    RunConfig,
    adapt,
    default_local_batches,
    make_shards,
    parse_synthetic_descriptor,
    read_checkpoint,
    resolve_data,
    resolve_scenario,
    run_centralized,
    run_experiment,
    run_from_config,
    run_round,
    write_checkpoint,
)
from difflearn.errors import NonFiniteValueError, ValidationError
from difflearn.metrics import read_record
from difflearn.model import MlpSpec, init_params, loss_and_gradient, sgd_step
from difflearn.rules import fresh_angle_state
from difflearn.seeding import substream
from difflearn.topology import build_topology, full_topology, line_topology

SYNTH = "synthetic:train=400,test=100,classes=5,features=8"


def small_config(**overrides):
    defaults = dict(
        algorithm="diffusion",
        rule="constant",
        epochs=2,
        rounds_per_epoch=2,
        batch_size=10,
        mu=0.05,
        topology="line:4",
        data=SYNTH,
        shard_size=50,
        noniid="none",
        hidden_dims=(8, 8),
        seed=0,
    )
    defaults.update(overrides)
    return RunConfig(**defaults)


def fresh_agent(agent_id, spec, shard, mu=0.05, seed=0):
    w = init_params(spec)
    return AgentState(
        agent_id=agent_id,
        w=w,
        psi=w.copy(),
        delta=np.zeros_like(w),
        mu=mu,
        angle_state=fresh_angle_state(),
        sampler=BatchSampler(shard, 10, substream(seed, "batch", agent_id)),
    )


class TestConfigValidation:
    def test_default_config_is_valid(self):
        RunConfig().validate()

    def test_adaptive_centralized_conflict(self):
        with pytest.raises(ValidationError, match="combine"):
            small_config(rule="adaptive", algorithm="centralized").validate()

    def test_adaptive_isolated_conflict(self):
        with pytest.raises(ValidationError):
            small_config(rule="adaptive", algorithm="isolated").validate()

    def test_unknown_algorithm(self):
        with pytest.raises(ValidationError, match="algorithm"):
            small_config(algorithm="gossip").validate()

    def test_bad_mu(self):
        with pytest.raises(ValidationError, match="mu"):
            small_config(mu=0.0).validate()

    def test_error_message_names_field(self):
        with pytest.raises(ValidationError) as err:
            small_config(batch_size=0).validate()
        assert err.value.field == "batch_size"

    def test_fingerprint_ignores_seed(self):
        assert small_config(seed=1).fingerprint() == small_config(seed=2).fingerprint()
        assert small_config(mu=0.01).fingerprint() != small_config(mu=0.02).fingerprint()

    def test_default_local_batches_paper_values(self):
        assert default_local_batches(600, 10, 6) == 10
        assert default_local_batches(50, 10, 2) == 3
        assert default_local_batches(5, 10, 6) == 1


class TestAdapt:
    def test_single_batch_matches_sgd_oracle(self):
        spec = MlpSpec(8, (8, 8), 5, init_seed=1)
        shard = make_synthetic(50, 5, 8, seed=2)
        agent = fresh_agent(0, spec, shard)
        oracle_sampler = BatchSampler(shard, 10, substream(0, "batch", 0))
        features, labels = oracle_sampler.next_batch()
        _, grad = loss_and_gradient(spec, agent.w, features, labels)
        expected = sgd_step(agent.w, grad, agent.mu)
        adapted = adapt(agent, spec, num_batches=1)
        np.testing.assert_array_equal(adapted.psi, expected)
        np.testing.assert_array_equal(adapted.delta, expected - agent.w)
        np.testing.assert_array_equal(adapted.w, agent.w)

    def test_zero_step_size_is_identity(self):
        spec = MlpSpec(8, (8, 8), 5, init_seed=1)
        shard = make_synthetic(50, 5, 8, seed=2)
        agent = fresh_agent(0, spec, shard, mu=0.0)
        adapted = adapt(agent, spec, num_batches=3)
        np.testing.assert_array_equal(adapted.psi, agent.w)
        np.testing.assert_array_equal(adapted.delta, 0.0)

    def test_deterministic(self):
        spec = MlpSpec(8, (8, 8), 5, init_seed=1)
        shard = make_synthetic(50, 5, 8, seed=2)
        a = adapt(fresh_agent(0, spec, shard), spec, num_batches=4)
        b = adapt(fresh_agent(0, spec, shard), spec, num_batches=4)
        np.testing.assert_array_equal(a.psi, b.psi)

    def test_rejects_zero_batches(self):
        spec = MlpSpec(8, (8, 8), 5, init_seed=1)
        shard = make_synthetic(50, 5, 8, seed=2)
        with pytest.raises(ValueError):
            adapt(fresh_agent(0, spec, shard), spec, num_batches=0)


class TestRunRound:
    def _setup(self, config, topology, num_classes=5):
        pool = make_synthetic(400, num_classes, 8, seed=3)
        datasets = make_shards(config, topology, pool)
        spec = MlpSpec(8, config.hidden_dims, num_classes, init_seed=9)
        states = [
            fresh_agent(k, spec, datasets.shards[k], mu=config.mu, seed=config.seed)
            for k in range(topology.num_agents)
        ]
        return pool, datasets, spec, states

    def test_single_agent_keeps_psi(self):
        config = small_config(topology="line:1")
        topology = build_topology(1, [])
        _, datasets, spec, states = self._setup(config, topology)
        new_states, ledger = run_round(
            states, topology, config, spec=spec,
            shard_sizes=datasets.shard_sizes(), num_batches={0: 2}, round_index=1,
        )
        np.testing.assert_array_equal(new_states[0].w, new_states[0].psi)
        assert ledger.sent == {0: spec.param_count}

    def test_full_graph_equal_shards_agree(self):
        config = small_config(topology="full:4")
        topology = full_topology(4)
        _, datasets, spec, states = self._setup(config, topology)
        new_states, _ = run_round(
            states, topology, config, spec=spec,
            shard_sizes=datasets.shard_sizes(),
            num_batches={k: 2 for k in range(4)}, round_index=1,
        )
        mean_psi = np.mean([s.psi for s in new_states], axis=0)
        for s in new_states:
            np.testing.assert_allclose(s.w, mean_psi, atol=1e-13)

    def test_ledger_counts_by_rule(self):
        topology = line_topology(4)
        for rule, factor in (("constant", 1), ("adaptive", 2)):
            config = small_config(rule=rule)
            _, datasets, spec, states = self._setup(config, topology)
            _, ledger = run_round(
                states, topology, config, spec=spec,
                shard_sizes=datasets.shard_sizes(),
                num_batches={k: 1 for k in range(4)}, round_index=1,
            )
            assert ledger.sent == {k: factor * spec.param_count for k in range(4)}
            assert ledger.total() == 4 * factor * spec.param_count

    def test_isolated_sends_nothing_and_skips_exchange(self):
        config = small_config(algorithm="isolated")
        topology = line_topology(4)
        _, datasets, spec, states = self._setup(config, topology)
        new_states, ledger = run_round(
            states, topology, config, spec=spec,
            shard_sizes=datasets.shard_sizes(),
            num_batches={k: 1 for k in range(4)}, round_index=1,
        )
        assert ledger.total() == 0
        for s in new_states:
            np.testing.assert_array_equal(s.w, s.psi)

    def test_consensus_excludes_self(self):
        # With self excluded on a line, end agent 0 must adopt exactly
        # agent 1's intermediate model.
        config = small_config(algorithm="consensus")
        topology = line_topology(4)
        _, datasets, spec, states = self._setup(config, topology)
        new_states, _ = run_round(
            states, topology, config, spec=spec,
            shard_sizes=datasets.shard_sizes(),
            num_batches={k: 1 for k in range(4)}, round_index=1,
        )
        np.testing.assert_array_equal(new_states[0].w, new_states[1].psi)
        assert not np.array_equal(new_states[0].w, new_states[0].psi)

    def test_round_stamps_set(self):
        config = small_config()
        topology = line_topology(4)
        _, datasets, spec, states = self._setup(config, topology)
        new_states, _ = run_round(
            states, topology, config, spec=spec,
            shard_sizes=datasets.shard_sizes(),
            num_batches={k: 1 for k in range(4)}, round_index=7,
        )
        assert all(s.round_stamp == 7 for s in new_states)


class TestRunExperiment:
    def test_row_shape_and_initial_epoch(self):
        record = run_from_config(small_config())
        assert record.epochs() == [0, 1, 2]
        for epoch in record.epochs():
            agents = [row.agent for row in record.rows if row.epoch == epoch]
            assert agents == [0, 1, 2, 3]

    def test_zero_epochs_gives_initial_rows_only(self):
        record = run_from_config(small_config(epochs=0))
        assert record.epochs() == [0]
        assert all(row.params_sent == 0 for row in record.rows)

    def test_determinism_same_seed(self):
        a = run_from_config(small_config(rule="adaptive"))
        b = run_from_config(small_config(rule="adaptive"))
        assert a == b

    def test_seed_changes_rows(self):
        a = run_from_config(small_config())
        b = run_from_config(small_config(seed=1))
        assert a.rows != b.rows
        assert a.fingerprint == b.fingerprint

    def test_ledger_law_constant(self):
        config = small_config(epochs=3, rounds_per_epoch=2)
        record = run_from_config(config)
        m = MlpSpec(8, config.hidden_dims, 5).param_count
        assert record.total_params_sent() == 4 * m * 3 * 2

    def test_ledger_law_adaptive(self):
        config = small_config(rule="adaptive", epochs=3, rounds_per_epoch=2)
        record = run_from_config(config)
        m = MlpSpec(8, config.hidden_dims, 5).param_count
        assert record.total_params_sent() == 4 * 2 * m * 3 * 2

    def test_params_sent_nondecreasing(self):
        record = run_from_config(small_config(epochs=3))
        for agent in range(4):
            sent = [row.params_sent for row in record.rows if row.agent == agent]
            assert sent == sorted(sent)

    def test_eval_subset(self):
        full = run_from_config(small_config())
        sub = run_from_config(small_config(eval_subset=20))
        assert full.fingerprint != sub.fingerprint
        assert full.rows != sub.rows

    def test_consensus_single_agent_rejected(self):
        config = small_config(algorithm="consensus", topology="line:1")
        with pytest.raises(ValidationError, match="consensus"):
            run_from_config(config)

    def test_shard_topology_size_mismatch(self):
        config = small_config()
        pool = make_synthetic(400, 5, 8, seed=3)
        datasets = make_shards(config, line_topology(4), pool)
        test = make_synthetic(50, 5, 8, seed=4)
        with pytest.raises(ValidationError, match="topology"):
            run_experiment(config, datasets, test, topology=line_topology(3))

    def test_partial_record_flushed_on_failure(self, tmp_path):
        config = small_config(mu=1e200, epochs=4)
        partial = tmp_path / "partial.csv"
        with np.errstate(all="ignore"):
            with pytest.raises(NonFiniteValueError):
                run_from_config(config, partial_path=partial)
        assert partial.exists()
        flushed = read_record(partial)
        assert 0 in flushed.epochs()

    def test_checkpoints_written(self, tmp_path):
        config = small_config(epochs=2)
        record = run_from_config(config, checkpoint_dir=tmp_path)
        assert record.epochs() == [0, 1, 2]
        params, epoch = read_checkpoint(tmp_path / "epoch0002.ckpt")
        assert epoch == 2
        assert len(params) == 4
        assert params[0].shape == (MlpSpec(8, config.hidden_dims, 5).param_count,)


class TestCentralized:
    def test_matches_single_agent_run(self):
        config = small_config(algorithm="centralized", topology="line:4")
        pool = make_synthetic(400, 5, 8, seed=3)
        test = make_synthetic(50, 5, 8, seed=4)
        record = run_centralized(config, pool, test)
        single = ShardedDataset((pool,), (frozenset(range(5)),))
        oracle = run_experiment(config, single, test, topology=build_topology(1, []))
        assert record == oracle

    def test_zero_communication(self):
        record = run_from_config(small_config(algorithm="centralized"))
        assert record.total_params_sent() == 0

    def test_pools_all_shards(self):
        config = small_config(algorithm="centralized")
        record = run_from_config(config)
        agents = {row.agent for row in record.rows}
        assert agents == {0}

    def test_deterministic(self):
        a = run_from_config(small_config(algorithm="centralized"))
        b = run_from_config(small_config(algorithm="centralized"))
        assert a == b


class TestScenarios:
    def test_none(self):
        topology = line_topology(4)
        agents, counts = resolve_scenario(small_config(noniid="none"), topology, 5)
        assert agents == set() and counts == {}

    def test_all_uses_exact_count(self):
        topology = line_topology(4)
        agents, counts = resolve_scenario(
            small_config(noniid="all", classes_per_noniid=3), topology, 5
        )
        assert agents == {0, 1, 2, 3}
        assert counts == {k: 3 for k in range(4)}

    def test_all_caps_at_num_classes(self):
        topology = line_topology(2)
        _, counts = resolve_scenario(
            small_config(noniid="all", classes_per_noniid=9), topology, 5
        )
        assert counts == {0: 5, 1: 5}

    def test_random_is_seeded(self):
        topology = line_topology(20)
        a = resolve_scenario(small_config(noniid="random"), topology, 10)
        b = resolve_scenario(small_config(noniid="random"), topology, 10)
        c = resolve_scenario(small_config(noniid="random", seed=1), topology, 10)
        assert a == b
        assert a != c
        agents, counts = a
        assert all(1 <= counts[k] <= 5 for k in agents)

    def test_central_picks_highest_degree(self):
        # star plus a pendant: agent 0 has degree 4, others at most 2
        topology = build_topology(6, [(0, 1), (0, 2), (0, 3), (0, 4), (4, 5)])
        agents, _ = resolve_scenario(small_config(noniid="central:2"), topology, 10)
        assert agents == {0, 4}

    def test_edge_picks_lowest_degree(self):
        topology = build_topology(6, [(0, 1), (0, 2), (0, 3), (0, 4), (4, 5)])
        agents, _ = resolve_scenario(small_config(noniid="edge:3"), topology, 10)
        assert agents == {1, 2, 3}

    def test_ids_mode(self):
        topology = line_topology(4)
        agents, counts = resolve_scenario(small_config(noniid="ids:0,2"), topology, 5)
        assert agents == {0, 2}
        assert set(counts) == {0, 2}

    def test_bad_modes(self):
        topology = line_topology(4)
        for mode in ("bogus", "central:x", "central:9", "ids:", "ids:7"):
            with pytest.raises(ValidationError):
                resolve_scenario(small_config(noniid=mode), topology, 5)

    def test_noniid_run_restricts_labels(self):
        config = small_config(noniid="all", classes_per_noniid=2)
        pool = make_synthetic(400, 5, 8, seed=3)
        datasets = make_shards(config, line_topology(4), pool)
        for shard, class_set in zip(datasets.shards, datasets.agent_class_sets):
            assert len(class_set) == 2
            assert set(np.unique(shard.labels)) <= class_set


class TestDataResolution:
    def test_synthetic_descriptor_parsing(self):
        spec = parse_synthetic_descriptor("synthetic:train=100,test=20,classes=3,features=4")
        assert spec == {"train": 100, "test": 20, "classes": 3, "features": 4}

    def test_synthetic_descriptor_defaults(self):
        assert parse_synthetic_descriptor("synthetic")["train"] == 2400

    def test_synthetic_descriptor_errors(self):
        with pytest.raises(ValidationError):
            parse_synthetic_descriptor("synthetic:bogus=1")
        with pytest.raises(ValidationError):
            parse_synthetic_descriptor("synthetic:train=abc")

    def test_synthetic_data_differs_between_pool_and_test(self):
        pool, test = resolve_data(small_config())
        assert len(pool) == 400 and len(test) == 100
        assert not np.array_equal(pool.features[:20], test.features[:20])

    def test_mnist_without_dir_is_actionable(self, monkeypatch):
        from difflearn.errors import MissingDataError

        monkeypatch.delenv("DIFFLEARN_DATA", raising=False)
        with pytest.raises(MissingDataError, match="DIFFLEARN_DATA"):
            resolve_data(small_config(data="mnist"))


class TestCheckpointFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        params = [rng.normal(size=12) for _ in range(3)]
        path = tmp_path / "model.ckpt"
        write_checkpoint(path, params, epoch=5)
        loaded, epoch = read_checkpoint(path)
        assert epoch == 5
        for original, decoded in zip(params, loaded):
            np.testing.assert_array_equal(original, decoded)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            read_checkpoint(path)
