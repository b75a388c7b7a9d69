"""Forward pass tests: edge form against matrix form and brute force."""

import itertools

import numpy as np
import pytest

from socialdiff.autodiff import Tape
from socialdiff.enums import (
    Activation,
    AttentionMode,
    GammaInput,
    Readout,
    Variant,
)
from socialdiff.evaluation import attention_stats
from socialdiff.exceptions import ConfigError
from socialdiff.graph import HeteroGraph
from socialdiff.model import (
    DiffusionModel,
    DiffusionState,
    ModelConfig,
    config_from_header,
    forward_all,
    forward_matrix,
    init_parameters,
    predict,
)
from socialdiff.params import ParameterSet
from socialdiff.synthetic import random_graph
from socialdiff.variant import EdgeIndex
from socialdiff.variants import BPR

from conftest import random_graphs

MODES = list(itertools.product(AttentionMode, repeat=2))


def assert_states_match(
    edge: DiffusionState, matrix: DiffusionState, atol: float = 1e-10
) -> None:
    assert edge.depth == matrix.depth
    for ours, theirs in zip(edge.users, matrix.users, strict=True):
        np.testing.assert_allclose(ours, theirs, rtol=0, atol=atol)
    for ours, theirs in zip(edge.items, matrix.items, strict=True):
        np.testing.assert_allclose(ours, theirs, rtol=0, atol=atol)
    for name in ("eta", "alpha", "beta", "gamma"):
        for ours, theirs in zip(
            getattr(edge, name), getattr(matrix, name), strict=True
        ):
            if ours is None:
                assert theirs is None
            else:
                np.testing.assert_allclose(ours, theirs, rtol=0, atol=atol)


def leaky(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, 0.01 * x)


def mlp(params: ParameterSet, prefix: str, x: np.ndarray) -> float:
    hidden = leaky(x @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"])
    return float((hidden @ params[f"{prefix}.w2"])[0])


def softmax(scores: list[float]) -> np.ndarray:
    values = np.exp(np.array(scores) - max(scores))
    return values / values.sum()


def brute_force_layer(
    graph: HeteroGraph, params: ParameterSet, U: np.ndarray, V: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One attentive layer written out user by user and item by item."""
    M, N = graph.M, graph.N
    new_items = V.copy()
    for i in range(N):
        raters = graph.raters(i)
        if not len(raters):
            continue
        eta = softmax(
            [
                mlp(params, "mlp1.0", np.concatenate([V[i], U[a]]))
                for a in raters
            ]
        )
        for weight, a in zip(eta, raters, strict=True):
            new_items[i] += weight * U[a]
    new_users = U.copy()
    for a in range(M):
        followees, rated = graph.followees(a), graph.rated_items(a)
        social = np.zeros_like(U[a])
        interest = np.zeros_like(U[a])
        if len(followees):
            alpha = softmax(
                [
                    mlp(params, "mlp2.0", np.concatenate([U[a], U[b]]))
                    for b in followees
                ]
            )
            for weight, b in zip(alpha, followees, strict=True):
                social += weight * U[b]
        if len(rated):
            beta = softmax(
                [
                    mlp(params, "mlp3.0", np.concatenate([U[a], V[i]]))
                    for i in rated
                ]
            )
            for weight, i in zip(beta, rated, strict=True):
                interest += weight * V[i]
        if not len(followees):
            gamma = np.array([0.0, 1.0])
        elif not len(rated):
            gamma = np.array([1.0, 0.0])
        else:
            gamma = softmax(
                [
                    mlp(params, "mlp4.0", np.concatenate([U[a], social])),
                    mlp(params, "mlp4.0", np.concatenate([U[a], interest])),
                ]
            )
        new_users[a] += gamma[0] * social + gamma[1] * interest
    return new_users, new_items


class TestMatrixEquivalence:
    @pytest.mark.parametrize(("node", "graph_mode"), MODES)
    def test_random_graphs(
        self, node: AttentionMode, graph_mode: AttentionMode
    ) -> None:
        for index, graph in enumerate(random_graphs(100, seed=len(MODES))):
            config = ModelConfig(
                dim=4,
                depth=1 + index % 3,
                hidden=3,
                node_attention=node,
                graph_attention=graph_mode,
            )
            model = DiffusionModel(config, graph)
            params = model.init_parameters(index, std=0.5)
            assert_states_match(
                model.forward(params), model.forward_matrix(params)
            )

    @pytest.mark.parametrize(
        "changes",
        [
            {"gamma_input": GammaInput.PREVIOUS},
            {"share_attention": True},
            {"hidden_activation": Activation.TANH},
            {"use_user_features": True, "use_item_features": True},
            {"variant": Variant.DIFFNET},
        ],
    )
    def test_switches(self, changes: dict[str, object]) -> None:
        for index, graph in enumerate(random_graphs(5, features=True)):
            config = ModelConfig(dim=4, depth=3, hidden=3).replace(**changes)
            model = DiffusionModel(config, graph)
            params = model.init_parameters(index, std=0.5)
            assert_states_match(
                model.forward(params), model.forward_matrix(params)
            )

    def test_module_functions_agree(self, graph: HeteroGraph) -> None:
        config = ModelConfig(dim=3, depth=2)
        params = init_parameters(config, graph, seed=1, std=0.5)
        assert_states_match(
            forward_all(graph, params, config),
            forward_matrix(graph, params, config),
        )


class TestBruteForce:
    def test_first_layer(self, graph: HeteroGraph) -> None:
        config = ModelConfig(dim=3, depth=1, hidden=4)
        model = DiffusionModel(config, graph)
        params = model.init_parameters(11, std=0.7)

        state = model.forward(params)
        users, items = brute_force_layer(graph, params, params.P, params.Q)

        np.testing.assert_allclose(state.users[1], users, atol=1e-10)
        np.testing.assert_allclose(state.items[1], items, atol=1e-10)

    def test_matrix_form_on_random_graphs(self) -> None:
        for index, graph in enumerate(random_graphs(30, seed=9)):
            config = ModelConfig(dim=3, depth=1, hidden=4)
            model = DiffusionModel(config, graph)
            params = model.init_parameters(index, std=0.7)

            state = model.forward_matrix(params)
            users, items = brute_force_layer(
                graph, params, params.P, params.Q
            )

            np.testing.assert_allclose(state.users[1], users, atol=1e-10)
            np.testing.assert_allclose(state.items[1], items, atol=1e-10)

    def test_forced_graph_weights(self, graph: HeteroGraph) -> None:
        model = DiffusionModel(ModelConfig(dim=3, depth=2), graph)
        params = model.init_parameters(0, std=0.5)
        edge, matrix = model.forward(params), model.forward_matrix(params)
        for gamma in (*edge.gamma, *matrix.gamma):
            assert gamma is not None
            # u3 follows nobody; u2 rated nothing.
            np.testing.assert_array_equal(gamma[3], [0.0, 1.0])
            np.testing.assert_array_equal(gamma[2], [1.0, 0.0])


class TestNormalization:
    @pytest.mark.parametrize(("node", "graph_mode"), MODES)
    def test_attention_rows_are_distributions(
        self, node: AttentionMode, graph_mode: AttentionMode
    ) -> None:
        for index, graph in enumerate(random_graphs(10, seed=3)):
            config = ModelConfig(
                dim=4, depth=2, node_attention=node, graph_attention=graph_mode
            )
            model = DiffusionModel(config, graph)
            state = model.forward(model.init_parameters(index, std=1.0))
            edges = state.index
            for layer in range(state.depth):
                for matrix, has_rows in (
                    (state.eta_matrix(layer), edges.item_degree > 0),
                    (state.alpha_matrix(layer), edges.has_social),
                    (state.beta_matrix(layer), edges.has_interest),
                ):
                    if not matrix.nnz:
                        continue
                    assert matrix.data.min() >= 0
                    sums = np.asarray(matrix.sum(axis=1)).ravel()
                    np.testing.assert_allclose(sums[has_rows], 1.0, atol=1e-6)
                gamma = state.gamma[layer]
                assert gamma is not None
                assert gamma.min() >= 0
                np.testing.assert_allclose(gamma.sum(axis=1), 1.0, atol=1e-6)

    def test_average_graph_attention_stats(
        self, graph: HeteroGraph
    ) -> None:
        config = ModelConfig(dim=4, depth=2, graph_attention=AttentionMode.AVG)
        model = DiffusionModel(config, graph)
        stats = attention_stats(model.forward(model.init_parameters(0)))
        for layer in stats.layers:
            assert layer["social_mean"] == 0.5
            assert layer["interest_mean"] == 0.5
            assert layer["social_var"] == 0.0


class TestDegeneracy:
    def test_depth_zero_matches_bpr(self, graph: HeteroGraph) -> None:
        diffnetpp = DiffusionModel(ModelConfig(dim=3, depth=0), graph)
        bpr = DiffusionModel(ModelConfig(variant=Variant.BPR, dim=3), graph)
        params = bpr.init_parameters(4)
        assert diffnetpp.parameter_shapes() == bpr.parameter_shapes()

        ours = diffnetpp.forward(params)
        theirs = bpr.forward(params)

        items = np.arange(graph.N)
        for user in range(graph.M):
            np.testing.assert_array_equal(
                ours.scores(user, items), theirs.scores(user, items)
            )

    def test_bpr_layer_passes_embeddings_through(
        self, graph: HeteroGraph
    ) -> None:
        variant = BPR(ModelConfig(variant=Variant.BPR, dim=3))
        index = EdgeIndex.from_graph(graph)
        rng = np.random.default_rng(0)
        users, items = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))

        layer = variant.propagate_matrix({}, index, 0, users, items, None)
        tape = Tape(recording=False)
        traced = variant.propagate(
            tape,
            {},
            index,
            0,
            tape.constant(users),
            tape.constant(items),
            None,
        )

        assert layer.users is users and layer.items is items
        np.testing.assert_array_equal(traced.users.value, users)
        np.testing.assert_array_equal(traced.items.value, items)
        assert layer.gamma is None and traced.gamma is None

    def test_without_features_layer_zero_is_the_embedding(
        self, featured_graph: HeteroGraph
    ) -> None:
        model = DiffusionModel(ModelConfig(dim=3, depth=1), featured_graph)
        params = model.init_parameters(2)
        state = model.forward(params)
        np.testing.assert_array_equal(state.users[0], params.P)
        np.testing.assert_array_equal(state.items[0], params.Q)

    def test_features_are_fused(self, featured_graph: HeteroGraph) -> None:
        config = ModelConfig(
            dim=3, depth=1, use_user_features=True, use_item_features=True
        )
        model = DiffusionModel(config, featured_graph)
        params = model.init_parameters(2)
        state = model.forward(params)
        assert featured_graph.X is not None
        np.testing.assert_allclose(
            state.users[0], params.P + featured_graph.X @ params["W1"]
        )

    def test_diffnet_keeps_items(self, graph: HeteroGraph) -> None:
        config = ModelConfig(variant=Variant.DIFFNET, dim=3, depth=2)
        model = DiffusionModel(config, graph)
        params = model.init_parameters(1)
        state = model.forward(params)
        for items in state.items:
            np.testing.assert_array_equal(items, params.Q)
        # u3 follows nobody: only its own vector enters the transform.
        weight = params["transform.0.weight"]
        expected = params.P[3] @ weight[3:] + params["transform.0.bias"]
        np.testing.assert_allclose(state.users[1][3], expected)


def relabel(
    graph: HeteroGraph, users: np.ndarray, items: np.ndarray
) -> HeteroGraph:
    """The same graph with user ``a`` renamed ``users[a]`` and item ``i``
    renamed ``items[i]``."""
    interest, social = graph.interest_edges, graph.social_edges
    return HeteroGraph.from_edges(
        graph.M,
        graph.N,
        np.stack([users[interest[:, 0]], items[interest[:, 1]]], axis=1),
        np.stack([users[social[:, 0]], users[social[:, 1]]], axis=1),
    )


def scatter(rows: np.ndarray, order: np.ndarray) -> np.ndarray:
    moved = np.empty_like(rows)
    moved[order] = rows
    return moved


def dependency_ball(
    graph: HeteroGraph, user: int, depth: int
) -> tuple[set[int], set[int]]:
    """Users and items whose layer-0 vectors can reach ``u^depth_user``."""
    users, items = {user}, set()
    for _ in range(depth):
        next_users, next_items = set(users), set(items)
        for a in users:
            next_users.update(int(b) for b in graph.followees(a))
            next_items.update(int(i) for i in graph.rated_items(a))
        for i in items:
            next_users.update(int(a) for a in graph.raters(i))
        users, items = next_users, next_items
    return users, items


class TestInvariants:
    @pytest.mark.parametrize(("node", "graph_mode"), MODES)
    def test_relabelling_permutes_states(
        self, node: AttentionMode, graph_mode: AttentionMode
    ) -> None:
        rng = np.random.default_rng(21)
        for index, graph in enumerate(random_graphs(10, seed=21)):
            users, items = rng.permutation(graph.M), rng.permutation(graph.N)
            config = ModelConfig(
                dim=4,
                depth=2,
                hidden=3,
                node_attention=node,
                graph_attention=graph_mode,
            )
            params = DiffusionModel(config, graph).init_parameters(
                index, std=0.5
            )
            moved = params.replace(
                {"P": scatter(params.P, users), "Q": scatter(params.Q, items)}
            )

            ours = DiffusionModel(config, graph).forward(params)
            relabelled = DiffusionModel(config, relabel(graph, users, items))
            theirs = relabelled.forward(moved)

            for k in range(3):
                np.testing.assert_allclose(
                    theirs.users[k][users], ours.users[k], atol=1e-10
                )
                np.testing.assert_allclose(
                    theirs.items[k][items], ours.items[k], atol=1e-10
                )
            for k in range(2):
                np.testing.assert_allclose(
                    theirs.gamma[k][users], ours.gamma[k], atol=1e-10
                )

    def test_chain_locality(self) -> None:
        # u_a follows u_{a+1} and rated item a only.
        pairs = np.array([[a, a] for a in range(6)])
        chain = np.array([[a, a + 1] for a in range(5)])
        graph = HeteroGraph.from_edges(6, 6, pairs, chain)
        model = DiffusionModel(ModelConfig(dim=3, depth=2), graph)
        params = model.init_parameters(1, std=0.5)
        base = model.forward(params).users[2][0]

        def shifted(name: str, row: int) -> np.ndarray:
            array = params[name].copy()
            array[row] += 1.0
            state = model.forward(params.replace({name: array}))
            return state.users[2][0]

        for name, row in (("P", 3), ("P", 5), ("Q", 2), ("Q", 4)):
            np.testing.assert_allclose(
                shifted(name, row), base, rtol=0, atol=1e-13
            )
        for name, row in (("P", 2), ("Q", 1)):
            assert not np.allclose(shifted(name, row), base)

    def test_changes_beyond_the_ball_do_not_reach_a_user(self) -> None:
        checked = 0
        for seed in range(8):
            graph = random_graph(
                30, 40, seed=seed, rating_prob=0.03, link_prob=0.03
            )
            model = DiffusionModel(ModelConfig(dim=3, depth=2), graph)
            params = model.init_parameters(seed, std=0.5)
            base = model.forward(params).users[2]
            for user in range(graph.M):
                near_users, near_items = dependency_ball(graph, user, 2)
                far_users = sorted(set(range(graph.M)) - near_users)
                far_items = sorted(set(range(graph.N)) - near_items)
                if not far_users or not far_items:
                    continue
                P, Q = params.P.copy(), params.Q.copy()
                P[far_users] += 1.0
                Q[far_items] -= 1.0
                state = model.forward(params.replace({"P": P, "Q": Q}))
                np.testing.assert_allclose(
                    state.users[2][user], base[user], rtol=0, atol=1e-13
                )
                checked += 1
        assert checked > 0

    @pytest.mark.parametrize("depth", [1, 2])
    def test_average_attention_is_linear(self, depth: int) -> None:
        config = ModelConfig(
            dim=4,
            depth=depth,
            node_attention=AttentionMode.AVG,
            graph_attention=AttentionMode.AVG,
        )
        for index, graph in enumerate(random_graphs(10, seed=8)):
            model = DiffusionModel(config, graph)
            first = model.init_parameters(index, std=0.5)
            second = model.init_parameters(index + 100, std=0.5)
            doubled = first.replace({"P": 2 * first.P, "Q": 2 * first.Q})
            summed = first.replace(
                {"P": first.P + second.P, "Q": first.Q + second.Q}
            )

            one, two = model.forward(first), model.forward(second)
            double, total = model.forward(doubled), model.forward(summed)

            for k in range(depth + 1):
                np.testing.assert_allclose(
                    double.users[k], 2 * one.users[k], atol=1e-12
                )
                np.testing.assert_allclose(
                    double.items[k], 2 * one.items[k], atol=1e-12
                )
                np.testing.assert_allclose(
                    total.users[k], one.users[k] + two.users[k], atol=1e-12
                )


class TestScoring:
    def test_concat_score_sums_layer_products(
        self, graph: HeteroGraph
    ) -> None:
        model = DiffusionModel(ModelConfig(dim=3, depth=2), graph)
        state = model.forward(model.init_parameters(5, std=0.5))
        expected = sum(
            float(state.users[k][1] @ state.items[k][4]) for k in range(3)
        )
        assert predict(state, 1, 4) == pytest.approx(expected, abs=1e-12)

    def test_last_readout(self, graph: HeteroGraph) -> None:
        config = ModelConfig(dim=3, depth=2, readout=Readout.LAST)
        model = DiffusionModel(config, graph)
        state = model.forward(model.init_parameters(5, std=0.5))
        assert state.user_matrix().shape == (4, 3)
        assert predict(state, 0, 0) == pytest.approx(
            float(state.users[2][0] @ state.items[2][0])
        )


class TestModelConfig:
    def test_bpr_forces_depth_zero(self) -> None:
        assert ModelConfig(variant="bpr", depth=3).depth == 0

    def test_strings_are_coerced(self) -> None:
        config = ModelConfig(node_attention="avg", readout="last")
        assert config.node_attention is AttentionMode.AVG
        assert config.readout is Readout.LAST
        assert config.variant is Variant.DIFFNETPP

    def test_unknown_enum_value(self) -> None:
        with pytest.raises(ConfigError):
            ModelConfig(graph_attention="sometimes")

    def test_unknown_key(self) -> None:
        with pytest.raises(ConfigError, match="Unknown model settings"):
            ModelConfig.from_mapping({"layers": 2})

    def test_mapping_round_trip(self) -> None:
        config = ModelConfig(dim=8, hidden=5, share_attention=True)
        assert ModelConfig.from_mapping(config.to_mapping()) == config

    @pytest.mark.parametrize(
        "changes", [{"dim": 0}, {"depth": -1}, {"hidden": 0}]
    )
    def test_invalid_sizes(self, changes: dict[str, int]) -> None:
        with pytest.raises(ConfigError):
            ModelConfig(**changes)  # type: ignore[arg-type]


class TestDiffusionModel:
    def test_average_attention_has_no_scorers(
        self, graph: HeteroGraph
    ) -> None:
        config = ModelConfig(
            dim=3,
            depth=2,
            node_attention=AttentionMode.AVG,
            graph_attention=AttentionMode.AVG,
        )
        assert set(DiffusionModel(config, graph).parameter_shapes()) == {
            "P",
            "Q",
        }

    def test_shared_attention_has_one_set(self, graph: HeteroGraph) -> None:
        config = ModelConfig(dim=3, depth=3, share_attention=True)
        names = set(DiffusionModel(config, graph).parameter_shapes())
        assert "mlp1.w1" in names
        assert not any(name.startswith("mlp1.1") for name in names)

    def test_per_layer_scorers(self, graph: HeteroGraph) -> None:
        shapes = DiffusionModel(
            ModelConfig(dim=3, depth=2, hidden=5), graph
        ).parameter_shapes()
        assert shapes["mlp4.1.w1"] == (6, 5)
        assert shapes["mlp4.1.b1"] == (5,)
        assert shapes["mlp4.1.w2"] == (5, 1)

    def test_features_required_when_enabled(self, graph: HeteroGraph) -> None:
        with pytest.raises(ConfigError, match="features"):
            DiffusionModel(ModelConfig(use_user_features=True), graph)

    def test_initialization(self, graph: HeteroGraph) -> None:
        model = DiffusionModel(ModelConfig(dim=100, depth=2), graph)
        params = model.init_parameters(0)
        weights = np.concatenate(
            [
                array.ravel()
                for name, array in params.items()
                if not name.endswith((".b1", ".bias"))
            ]
        )
        assert weights.size >= 100_000
        assert -0.001 < float(weights.mean()) < 0.001
        assert 0.0095 < float(weights.std()) < 0.0105
        np.testing.assert_array_equal(
            params.P, model.init_parameters(0).P
        )

    @pytest.mark.parametrize(
        "config",
        [
            ModelConfig(dim=3, depth=2),
            ModelConfig(variant=Variant.DIFFNET, dim=3, depth=2),
        ],
    )
    def test_biases_start_at_zero(
        self, graph: HeteroGraph, config: ModelConfig
    ) -> None:
        params = DiffusionModel(config, graph).init_parameters(3)
        biases = [name for name in params if name.endswith((".b1", ".bias"))]
        assert biases
        for name in biases:
            assert not params[name].any()

    def test_parameter_mismatch(self, graph: HeteroGraph) -> None:
        model = DiffusionModel(ModelConfig(dim=3, depth=1), graph)
        other = DiffusionModel(ModelConfig(dim=4, depth=1), graph)
        with pytest.raises(ConfigError, match="do not match"):
            model.forward(other.init_parameters(0))

    def test_header_round_trip(self, graph: HeteroGraph) -> None:
        config = ModelConfig(
            dim=3,
            depth=2,
            graph_attention=AttentionMode.AVG,
            readout=Readout.LAST,
        )
        header = DiffusionModel(config, graph).checkpoint_header(seed=9)
        assert header.users == 4
        assert header.seed == 9
        assert config_from_header(header) == config.replace(hidden=3)
