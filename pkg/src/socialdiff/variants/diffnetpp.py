"""Influence and interest diffusion with node- and graph-level attention."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from typing import ClassVar

import numpy as np
import scipy.sparse as sp
from scipy.special import softmax

from socialdiff import autodiff as ad
from socialdiff.autodiff import Tape, Tensor
from socialdiff.enums import AttentionMode, GammaInput
from socialdiff.variant import (
    Array,
    BaseVariant,
    EdgeIndex,
    LayerOutput,
    MatrixLayer,
    entries,
    perceptron,
    perceptron_scores,
    perceptron_shapes,
    row_softmax,
)

ITEM_SCORER = "mlp1"
SOCIAL_SCORER = "mlp2"
INTEREST_SCORER = "mlp3"
GRAPH_SCORER = "mlp4"


@dataclass(frozen=True, eq=False)
class Attention:
    eta: Tensor
    alpha: Tensor
    beta: Tensor
    gamma_social: Tensor
    gamma_interest: Tensor
    social: Tensor
    interest: Tensor


class DiffNetPlusPlus(BaseVariant):
    """Users mix a social aggregate over S_a and an interest aggregate
    over R_a; items absorb their raters.

    ``v' = v + sum_{a in R_i} eta_ia u_a`` and
    ``u' = u + gamma_1 sum_{b in S_a} alpha_ab u_b
    + gamma_2 sum_{i in R_a} beta_ai v_i``.
    """

    slug: ClassVar[str] = "diffnetpp"
    display_name: ClassVar[str] = "DiffNet++"

    def _prefix(self, scorer: str, layer: int) -> str:
        if self.config.share_attention:
            return scorer
        return f"{scorer}.{layer}"

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        config = self.config
        scorers: list[str] = []
        if config.node_attention is AttentionMode.ATT:
            scorers += [ITEM_SCORER, SOCIAL_SCORER, INTEREST_SCORER]
        if config.graph_attention is AttentionMode.ATT:
            scorers.append(GRAPH_SCORER)
        layers = range(
            min(config.depth, 1) if config.share_attention else config.depth
        )
        shapes: dict[str, tuple[int, ...]] = {}
        for layer in layers:
            for scorer in scorers:
                shapes.update(
                    perceptron_shapes(
                        self._prefix(scorer, layer),
                        2 * config.dim,
                        config.hidden_width,
                    )
                )
        return shapes

    def _node_weights(
        self,
        tape: Tape,
        leaves: Mapping[str, Tensor],
        scorer: str,
        layer: int,
        center: Tensor,
        neighbor: Tensor,
        segments: Array,
        count: int,
    ) -> Tensor:
        if self.config.node_attention is AttentionMode.AVG:
            degree = np.bincount(segments, minlength=count)
            return tape.constant(1.0 / degree[segments])
        scores = perceptron(
            ad.concat([center, neighbor]),
            leaves,
            self._prefix(scorer, layer),
            self.config.hidden_activation,
        )
        return ad.exp_normalize(scores, segments, count)

    def _graph_weights(
        self,
        tape: Tape,
        leaves: Mapping[str, Tensor],
        index: EdgeIndex,
        layer: int,
        users: Tensor,
        social: Tensor,
        interest: Tensor,
    ) -> tuple[Tensor, Tensor]:
        has_social, has_interest = index.has_social, index.has_interest
        both = (has_social & has_interest).astype(float)
        social_only = (has_social & ~has_interest).astype(float)
        no_social = (~has_social).astype(float)
        if self.config.graph_attention is AttentionMode.AVG:
            return (
                tape.constant(0.5 * both + social_only),
                tape.constant(0.5 * both + no_social),
            )
        prefix = self._prefix(GRAPH_SCORER, layer)
        kind = self.config.hidden_activation
        social_score = perceptron(
            ad.concat([users, social]), leaves, prefix, kind
        )
        interest_score = perceptron(
            ad.concat([users, interest]), leaves, prefix, kind
        )
        M = index.users
        rows = np.arange(M, dtype=np.int64)
        weights = ad.exp_normalize(
            ad.concat([social_score, interest_score], axis=0),
            np.concatenate([rows, rows]),
            M,
        )
        mask = tape.constant(both)
        return (
            ad.row_gather(weights, rows) * mask + tape.constant(social_only),
            ad.row_gather(weights, rows + M) * mask + tape.constant(no_social),
        )

    def attend(
        self,
        tape: Tape,
        leaves: Mapping[str, Tensor],
        index: EdgeIndex,
        layer: int,
        users: Tensor,
        items: Tensor,
        previous: tuple[Tensor, Tensor] | None,
    ) -> Attention:
        """Node weights, aggregates and graph weights of one layer.

        ``previous`` holds the social and interest aggregates of the
        layer before; it is only read with ``gamma_input="previous"``.
        """
        M, N = index.users, index.items
        rater = ad.row_gather(users, index.rated_user)
        rated = ad.row_gather(items, index.rated_item)
        followee = ad.row_gather(users, index.followee)
        eta = self._node_weights(
            tape,
            leaves,
            ITEM_SCORER,
            layer,
            rated,
            rater,
            index.rated_item,
            N,
        )
        alpha = self._node_weights(
            tape,
            leaves,
            SOCIAL_SCORER,
            layer,
            ad.row_gather(users, index.follower),
            followee,
            index.follower,
            M,
        )
        beta = self._node_weights(
            tape,
            leaves,
            INTEREST_SCORER,
            layer,
            rater,
            rated,
            index.rated_user,
            M,
        )
        social = ad.segment_sum(
            ad.scale_rows(alpha, followee), index.follower, M
        )
        interest = ad.segment_sum(
            ad.scale_rows(beta, rated), index.rated_user, M
        )
        if self.config.gamma_input is GammaInput.PREVIOUS:
            if previous is None:
                zeros = tape.constant(np.zeros(users.shape))
                previous = (zeros, zeros)
            gamma_in = previous
        else:
            gamma_in = (social, interest)
        gamma_social, gamma_interest = self._graph_weights(
            tape, leaves, index, layer, users, *gamma_in
        )
        return Attention(
            eta, alpha, beta, gamma_social, gamma_interest, social, interest
        )

    def propagate(
        self,
        tape: Tape,
        leaves: Mapping[str, Tensor],
        index: EdgeIndex,
        layer: int,
        users: Tensor,
        items: Tensor,
        previous: LayerOutput | None,
    ) -> LayerOutput:
        prior = None
        if (
            previous is not None
            and previous.social is not None
            and previous.interest is not None
        ):
            prior = (previous.social, previous.interest)
        att = self.attend(tape, leaves, index, layer, users, items, prior)
        absorbed = ad.segment_sum(
            ad.scale_rows(att.eta, ad.row_gather(users, index.rated_user)),
            index.rated_item,
            index.items,
        )
        next_users = (
            users
            + ad.scale_rows(att.gamma_social, att.social)
            + ad.scale_rows(att.gamma_interest, att.interest)
        )
        return LayerOutput(
            users=next_users,
            items=items + absorbed,
            eta=att.eta.value,
            alpha=att.alpha.value,
            beta=att.beta.value,
            gamma=np.stack(
                [att.gamma_social.value, att.gamma_interest.value], axis=1
            ),
            social=att.social,
            interest=att.interest,
        )

    def _matrix_weights(
        self,
        params: Mapping[str, Array],
        scorer: str,
        layer: int,
        center: Array,
        neighbor: Array,
        rows: Array,
        cols: Array,
        shape: tuple[int, int],
    ) -> sp.csr_matrix:
        if self.config.node_attention is AttentionMode.AVG:
            scores = np.zeros(len(rows))
        else:
            scores = perceptron_scores(
                np.hstack([center, neighbor]),
                params,
                self._prefix(scorer, layer),
                self.config.hidden_activation,
            )
        return row_softmax(scores, rows, cols, shape)

    def _matrix_gamma(
        self,
        params: Mapping[str, Array],
        index: EdgeIndex,
        layer: int,
        users: Array,
        social: Array,
        interest: Array,
    ) -> Array:
        has_social, has_interest = index.has_social, index.has_interest
        forced = np.column_stack([has_social, ~has_social]).astype(float)
        if self.config.graph_attention is AttentionMode.AVG:
            free = np.full((index.users, 2), 0.5)
        else:
            prefix = self._prefix(GRAPH_SCORER, layer)
            kind = self.config.hidden_activation
            free = softmax(
                np.column_stack(
                    [
                        perceptron_scores(
                            np.hstack([users, social]), params, prefix, kind
                        ),
                        perceptron_scores(
                            np.hstack([users, interest]), params, prefix, kind
                        ),
                    ]
                ),
                axis=1,
            )
        both = (has_social & has_interest)[:, None]
        return np.where(both, free, forced)

    def propagate_matrix(
        self,
        params: Mapping[str, Array],
        index: EdgeIndex,
        layer: int,
        users: Array,
        items: Array,
        previous: MatrixLayer | None,
    ) -> MatrixLayer:
        M, N = index.users, index.items
        A = self._matrix_weights(
            params,
            SOCIAL_SCORER,
            layer,
            users[index.follower],
            users[index.followee],
            index.follower,
            index.followee,
            (M, M),
        )
        B = self._matrix_weights(
            params,
            INTEREST_SCORER,
            layer,
            users[index.rated_user],
            items[index.rated_item],
            index.rated_user,
            index.rated_item,
            (M, N),
        )
        H = self._matrix_weights(
            params,
            ITEM_SCORER,
            layer,
            items[index.rated_item],
            users[index.rated_user],
            index.rated_item,
            index.rated_user,
            (N, M),
        )
        social, interest = A @ users, B @ items
        if self.config.gamma_input is GammaInput.PREVIOUS:
            if (
                previous is None
                or previous.social is None
                or previous.interest is None
            ):
                gamma_in = (np.zeros_like(users), np.zeros_like(users))
            else:
                gamma_in = (previous.social, previous.interest)
        else:
            gamma_in = (social, interest)
        gamma = self._matrix_gamma(params, index, layer, users, *gamma_in)
        social_block = sp.identity(M) + sp.diags(gamma[:, 0]) @ A
        interest_block = sp.diags(gamma[:, 1]) @ B
        block = sp.bmat(
            [[social_block, interest_block], [H, sp.identity(N)]],
            format="csr",
        )
        stacked = (block @ np.vstack([users, items])).astype(users.dtype)
        return MatrixLayer(
            users=stacked[:M],
            items=stacked[M:],
            eta=entries(H, index.rated_item, index.rated_user),
            alpha=entries(A, index.follower, index.followee),
            beta=entries(B, index.rated_user, index.rated_item),
            gamma=gamma,
            social=social,
            interest=interest,
        )
