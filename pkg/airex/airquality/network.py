"""The inference network: encoders, station attention, city attention,
per-city experts and the mixture output.

Every layer is batched over samples. Layers use the row-vector convention
``x @ W + b`` with ``W`` of shape (in, out).
"""

from __future__ import annotations

from collections.abc import Iterator, Mapping, Sequence
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from airex.airquality import autodiff as ad
from airex.airquality.autodiff import Node
from airex.airquality.conf import airex_setting
from airex.airquality.exceptions import ConfigError, ShapeError
from airex.airquality.features import FeatureBundle, StationFeatures


@dataclass(frozen=True)
class InputDims:
    station_static: int
    station_series: int
    target_static: int
    target_series: int
    city: int = 2

    @classmethod
    def from_bundle(cls, bundle: FeatureBundle) -> InputDims:
        station = next(iter(bundle.x_stn.values()), None)
        if station is None:
            raise ShapeError("Cannot infer input dimensions from a bundle without stations.")
        city = next(iter(bundle.x_city.values()))
        return cls(
            station_static=len(station.static),
            station_series=len(station.series),
            target_static=len(bundle.x_tgt_static),
            target_series=len(bundle.x_tgt_series),
            city=len(city),
        )


@dataclass(frozen=True)
class NetworkShape:
    dims: InputDims
    window: int = 24
    lstm_hidden: int = 300
    lstm_layers: int = 2
    basic_widths: tuple[int, ...] = (100,)
    fusion_widths: tuple[int, ...] = (200, 200)
    attention_hidden: int = 100
    expert_hidden: int = 100
    max_stations: int = 5

    def __post_init__(self) -> None:
        object.__setattr__(self, "basic_widths", tuple(self.basic_widths))
        object.__setattr__(self, "fusion_widths", tuple(self.fusion_widths))
        if not self.basic_widths or not self.fusion_widths:
            raise ConfigError("Both the basic and the fusion FC stacks need a layer.")
        sizes = (
            self.window,
            self.lstm_hidden,
            self.lstm_layers,
            self.attention_hidden,
            self.expert_hidden,
            self.max_stations,
            *self.basic_widths,
            *self.fusion_widths,
            *asdict(self.dims).values(),
        )
        if any(int(s) < 1 for s in sizes):
            raise ConfigError(f"Network sizes must be positive: {self}")

    @property
    def embedding_dim(self) -> int:
        return self.fusion_widths[-1]

    @classmethod
    def from_settings(cls, dims: InputDims, **overrides) -> NetworkShape:
        values = {
            "window": airex_setting("WINDOW"),
            "lstm_hidden": airex_setting("LSTM_HIDDEN"),
            "lstm_layers": airex_setting("LSTM_LAYERS"),
            "basic_widths": tuple(airex_setting("BASIC_WIDTHS")),
            "fusion_widths": tuple(airex_setting("FUSION_WIDTHS")),
            "attention_hidden": airex_setting("ATTENTION_HIDDEN"),
            "expert_hidden": airex_setting("EXPERT_HIDDEN"),
            "max_stations": airex_setting("STATIONS_PER_CITY"),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(dims=dims, **values)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["basic_widths"] = list(self.basic_widths)
        data["fusion_widths"] = list(self.fusion_widths)
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> NetworkShape:
        values = dict(data)
        values["dims"] = InputDims(**values["dims"])
        values["basic_widths"] = tuple(values["basic_widths"])
        values["fusion_widths"] = tuple(values["fusion_widths"])
        return cls(**values)


def _uniform(
    rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, name: str
) -> Node:
    bound = 1.0 / np.sqrt(fan_in)
    return ad.parameter(rng.uniform(-bound, bound, size=shape), name=name)


class ParamGroup:
    """Walks dataclass fields to name every parameter node."""

    def named(self, prefix: str) -> Iterator[tuple[str, Node]]:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Node):
                yield f"{prefix}.{f.name}", value
            elif isinstance(value, ParamGroup):
                yield from value.named(f"{prefix}.{f.name}")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Node):
                        yield f"{prefix}.{f.name}.{i}", item
                    else:
                        yield from item.named(f"{prefix}.{f.name}.{i}")


@dataclass(eq=False)
class LstmParams(ParamGroup):
    """Peephole LSTM layer; ``W_ic``, ``W_fc`` and ``W_oc`` are diagonal and
    stored as vectors."""

    W_ix: Node
    W_ih: Node
    W_ic: Node
    W_fx: Node
    W_fh: Node
    W_fc: Node
    W_cx: Node
    W_ch: Node
    W_ox: Node
    W_oh: Node
    W_oc: Node
    b_i: Node
    b_f: Node
    b_c: Node
    b_o: Node

    @property
    def input_dim(self) -> int:
        return self.W_ix.shape[0]

    @property
    def hidden(self) -> int:
        return self.W_ih.shape[0]

    @classmethod
    def initialize(cls, input_dim: int, hidden: int, rng: np.random.Generator) -> LstmParams:
        fan_in = input_dim + hidden
        values = {}
        for gate in "ifco":
            values[f"W_{gate}x"] = _uniform(rng, (input_dim, hidden), fan_in, f"W_{gate}x")
            values[f"W_{gate}h"] = _uniform(rng, (hidden, hidden), fan_in, f"W_{gate}h")
            if gate != "c":
                values[f"W_{gate}c"] = _uniform(rng, (hidden,), hidden, f"W_{gate}c")
            values[f"b_{gate}"] = _uniform(rng, (hidden,), fan_in, f"b_{gate}")
        return cls(**values)


@dataclass(eq=False)
class FcStackParams(ParamGroup):
    weights: list[Node]
    biases: list[Node]

    @classmethod
    def initialize(
        cls, input_dim: int, widths: Sequence[int], rng: np.random.Generator
    ) -> FcStackParams:
        weights, biases = [], []
        fan_in = input_dim
        for i, width in enumerate(widths):
            weights.append(_uniform(rng, (fan_in, width), fan_in, f"W{i}"))
            biases.append(_uniform(rng, (width,), fan_in, f"b{i}"))
            fan_in = width
        return cls(weights, biases)


@dataclass(eq=False)
class EncoderParams(ParamGroup):
    lstm: list[LstmParams]
    basic: FcStackParams
    fusion: FcStackParams

    @classmethod
    def initialize(
        cls,
        static_dim: int,
        series_dim: int,
        shape: NetworkShape,
        rng: np.random.Generator,
    ) -> EncoderParams:
        lstm = []
        input_dim = series_dim
        for _ in range(shape.lstm_layers):
            lstm.append(LstmParams.initialize(input_dim, shape.lstm_hidden, rng))
            input_dim = shape.lstm_hidden
        basic = FcStackParams.initialize(static_dim, shape.basic_widths, rng)
        fusion = FcStackParams.initialize(
            shape.basic_widths[-1] + shape.lstm_hidden, shape.fusion_widths, rng
        )
        return cls(lstm, basic, fusion)


@dataclass(eq=False)
class AttentionParams(ParamGroup):
    W_alpha: Node
    b_alpha: Node
    w_alpha: Node
    # the scalar output biases shift every softmax logit equally; they cancel
    # and always receive a zero gradient
    b_alpha_out: Node
    W_beta: Node
    b_beta: Node
    w_beta: Node
    b_beta_out: Node

    @classmethod
    def initialize(cls, shape: NetworkShape, rng: np.random.Generator) -> AttentionParams:
        d = shape.embedding_dim
        h = shape.attention_hidden
        alpha_in = 2 * d
        beta_in = d + shape.max_stations * d + shape.dims.city
        return cls(
            W_alpha=_uniform(rng, (alpha_in, h), alpha_in, "W_alpha"),
            b_alpha=_uniform(rng, (h,), alpha_in, "b_alpha"),
            w_alpha=_uniform(rng, (h, 1), h, "w_alpha"),
            b_alpha_out=_uniform(rng, (1,), h, "b_alpha_out"),
            W_beta=_uniform(rng, (beta_in, h), beta_in, "W_beta"),
            b_beta=_uniform(rng, (h,), beta_in, "b_beta"),
            w_beta=_uniform(rng, (h, 1), h, "w_beta"),
            b_beta_out=_uniform(rng, (1,), h, "b_beta_out"),
        )


@dataclass(eq=False)
class ExpertParams(ParamGroup):
    W: Node
    b: Node
    w: Node
    b_out: Node

    @classmethod
    def initialize(cls, shape: NetworkShape, rng: np.random.Generator) -> ExpertParams:
        fan_in = 2 * shape.embedding_dim
        h = shape.expert_hidden
        return cls(
            W=_uniform(rng, (fan_in, h), fan_in, "W"),
            b=_uniform(rng, (h,), fan_in, "b"),
            w=_uniform(rng, (h, 1), h, "w"),
            b_out=_uniform(rng, (1,), h, "b_out"),
        )


@dataclass(eq=False)
class AirexParams:
    """All trainable weights: one station encoder shared by every station, a
    separate target encoder, the two attention blocks and one expert per
    source city."""

    shape: NetworkShape
    cities: tuple[str, ...]
    station_encoder: EncoderParams
    target_encoder: EncoderParams
    attention: AttentionParams
    experts: dict[str, ExpertParams] = field(default_factory=dict)

    @classmethod
    def initialize(
        cls, shape: NetworkShape, cities: Sequence[str], seed: int = 0
    ) -> AirexParams:
        if not cities:
            raise ConfigError("At least one source city is needed to build experts.")
        rng = np.random.default_rng(seed)
        dims = shape.dims
        station_encoder = EncoderParams.initialize(
            dims.station_static, dims.station_series, shape, rng
        )
        target_encoder = EncoderParams.initialize(
            dims.target_static, dims.target_series, shape, rng
        )
        attention = AttentionParams.initialize(shape, rng)
        experts = {city: ExpertParams.initialize(shape, rng) for city in cities}
        return cls(shape, tuple(cities), station_encoder, target_encoder, attention, experts)

    def named_parameters(self) -> dict[str, Node]:
        named = dict(self.station_encoder.named("station_encoder"))
        named.update(self.target_encoder.named("target_encoder"))
        named.update(self.attention.named("attention"))
        for city in self.cities:
            named.update(self.experts[city].named(f"experts.{city}"))
        return named

    def parameters(self) -> list[Node]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_parameters().items()}

    def load_values(self, values: Mapping[str, np.ndarray]) -> None:
        named = self.named_parameters()
        missing = sorted(set(named) - set(values))
        extra = sorted(set(values) - set(named))
        if missing or extra:
            raise ShapeError(
                f"Parameter names do not match: missing {missing[:5]}, unexpected {extra[:5]}"
            )
        for name, node in named.items():
            value = np.asarray(values[name], dtype=np.float64)
            if value.shape != node.shape:
                raise ShapeError(
                    f"Parameter {name} has shape {value.shape}, expected {node.shape}"
                )
            node.value = value.copy()

    def expert(self, city: str) -> ExpertParams:
        try:
            return self.experts[city]
        except KeyError:
            raise ShapeError(f"No expert for source city {city!r}.") from None


def _linear(x: Node, W: Node, b: Node) -> Node:
    return ad.add(ad.matmul(x, W), b)


def lstm_step(
    x_t: Node, h_prev: Node, c_prev: Node, p: LstmParams
) -> tuple[Node, Node]:
    """One peephole LSTM step on a batch of rows."""
    if x_t.shape[-1] != p.input_dim or h_prev.shape[-1] != p.hidden:
        raise ShapeError(
            f"lstm_step: input {x_t.shape} / state {h_prev.shape} do not match "
            f"weights ({p.input_dim} -> {p.hidden})"
        )
    i = ad.sigmoid(
        _linear(x_t, p.W_ix, p.b_i) + ad.matmul(h_prev, p.W_ih) + c_prev * p.W_ic
    )
    f = ad.sigmoid(
        _linear(x_t, p.W_fx, p.b_f) + ad.matmul(h_prev, p.W_fh) + c_prev * p.W_fc
    )
    c = f * c_prev + i * ad.tanh(_linear(x_t, p.W_cx, p.b_c) + ad.matmul(h_prev, p.W_ch))
    o = ad.sigmoid(_linear(x_t, p.W_ox, p.b_o) + ad.matmul(h_prev, p.W_oh) + c * p.W_oc)
    h = o * ad.tanh(c)
    return h, c


def lstm_final_state(series: Node, layers: Sequence[LstmParams]) -> Node:
    """Run stacked layers over (batch, steps, features); layer n+1 consumes the
    hidden sequence of layer n. Returns the last hidden state of the top layer."""
    batch, steps = series.shape[0], series.shape[1]
    inputs = [series[:, t, :] for t in range(steps)]
    for layer in layers:
        h = ad.constant(np.zeros((batch, layer.hidden)))
        c = ad.constant(np.zeros((batch, layer.hidden)))
        outputs = []
        for x_t in inputs:
            h, c = lstm_step(x_t, h, c, layer)
            outputs.append(h)
        inputs = outputs
    return inputs[-1]


def fc_stack(x: Node, stack: FcStackParams) -> Node:
    for W, b in zip(stack.weights, stack.biases):
        x = ad.relu(_linear(x, W, b))
    return x


def _encode(static: Node, series: Node, enc: EncoderParams, window: int) -> Node:
    if series.ndim != 3 or series.shape[1] != window:
        raise ShapeError(
            f"Expected sequences of {window} steps, got shape {series.shape}"
        )
    h = lstm_final_state(series, enc.lstm)
    z = fc_stack(static, enc.basic)
    return fc_stack(ad.concat([z, h], axis=-1), enc.fusion)


def encode_station(static: Node, series: Node, params: AirexParams) -> Node:
    """(batch, static) and (batch, window, series) station inputs to embeddings."""
    return _encode(static, series, params.station_encoder, params.shape.window)


def encode_target(static: Node, series: Node, params: AirexParams) -> Node:
    return _encode(static, series, params.target_encoder, params.shape.window)


def station_attention(
    z_tgt: Node, z_stations: Node, att: AttentionParams
) -> tuple[Node, Node]:
    """Softmax weights over a city's stations and their weighted embedding.

    ``z_tgt`` is (batch, d) and ``z_stations`` (batch, stations, d).
    """
    batch, n_stations, d = z_stations.shape
    if n_stations == 0:
        raise ShapeError("station_attention: city has no stations")
    hidden = att.W_alpha.shape[1]
    # W_alpha (z_tgt ⊕ z_s) split into its target and station rows
    projected = ad.add(
        ad.reshape(ad.matmul(z_tgt, att.W_alpha[:d]), (batch, 1, hidden)),
        ad.matmul(z_stations, att.W_alpha[d:]),
    )
    scores = ad.matmul(ad.relu(projected + att.b_alpha), att.w_alpha)
    alpha = ad.softmax(ad.reshape(scores, (batch, n_stations)) + att.b_alpha_out, axis=-1)
    z_city = ad.matmul(ad.reshape(alpha, (batch, 1, n_stations)), z_stations)
    return alpha, ad.reshape(z_city, (batch, d))


def pad_stations(z_stations: Node, max_stations: int) -> Node:
    """Flatten (batch, stations, d) to (batch, max_stations * d), zero-filling
    the unused slots."""
    batch, n_stations, d = z_stations.shape
    if n_stations > max_stations:
        raise ShapeError(
            f"City has {n_stations} stations, more than the {max_stations} slots."
        )
    flat = ad.reshape(z_stations, (batch, n_stations * d))
    if n_stations == max_stations:
        return flat
    padding = ad.constant(np.zeros((batch, (max_stations - n_stations) * d)))
    return ad.concat([flat, padding], axis=-1)


def city_attention(
    z_tgt: Node,
    z_plus: Sequence[Node],
    x_city: Sequence[Node],
    att: AttentionParams,
) -> Node:
    """Softmax weights over source cities, (batch, cities)."""
    if len(z_plus) != len(x_city) or not z_plus:
        raise ShapeError(
            f"city_attention: {len(z_plus)} embeddings for {len(x_city)} cities"
        )
    batch = z_tgt.shape[0]
    rows = [
        ad.reshape(ad.concat([z_tgt, zk, xk], axis=-1), (batch, 1, -1))
        for zk, xk in zip(z_plus, x_city)
    ]
    stacked = ad.concat(rows, axis=1)
    if stacked.shape[-1] != att.W_beta.shape[0]:
        raise ShapeError(
            f"city_attention: input width {stacked.shape[-1]} does not match "
            f"W_beta {att.W_beta.shape}"
        )
    hidden = ad.relu(_linear(stacked, att.W_beta, att.b_beta))
    scores = ad.reshape(ad.matmul(hidden, att.w_beta), (batch, len(z_plus)))
    return ad.softmax(scores + att.b_beta_out, axis=-1)


def expert_infer(z_tgt: Node, z_city: Node, p: ExpertParams) -> Node:
    """Per-sample inferred value of one source city's expert, shape (batch,)."""
    x = ad.concat([z_tgt, z_city], axis=-1)
    out = ad.add(ad.matmul(ad.relu(_linear(x, p.W, p.b)), p.w), p.b_out)
    return ad.reshape(out, (x.shape[0],))


def mixture(beta: Node, outputs: Node) -> Node:
    if beta.shape != outputs.shape:
        raise ShapeError(
            f"mixture: weights {beta.shape} and expert outputs {outputs.shape} differ"
        )
    return ad.sum(beta * outputs, axis=-1)


@dataclass(frozen=True, eq=False)
class BatchInputs:
    """Stacked numeric inputs of bundles with equal station counts per city.

    ``city_stations`` records the first bundle's station ids.
    """

    cities: tuple[str, ...]
    city_stations: Mapping[str, tuple[str, ...]]
    tgt_static: np.ndarray
    tgt_series: np.ndarray
    stn_static: np.ndarray
    stn_series: np.ndarray
    city: np.ndarray
    aux_static: np.ndarray | None = None
    aux_series: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.tgt_static.shape[0]

    def city_slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for city in self.cities:
            n = len(self.city_stations[city])
            out[city] = slice(start, start + n)
            start += n
        return out


def _stack_stations(
    groups: Sequence[Sequence[StationFeatures]],
) -> tuple[np.ndarray, np.ndarray]:
    static = np.stack([np.stack([s.static.values for s in g]) for g in groups])
    series = np.stack([np.stack([s.series.values for s in g]) for g in groups])
    return static, series


def stack_bundles(
    bundles: Sequence[FeatureBundle],
    auxiliary: Sequence[Sequence[StationFeatures]] | None = None,
) -> BatchInputs:
    """Stack bundles for one batched forward pass.

    ``auxiliary`` holds per bundle the extra stations (of the meta-target city
    during training) whose embeddings feed the distribution-alignment loss.
    """
    if not bundles:
        raise ShapeError("Cannot stack an empty batch.")
    first = bundles[0]
    cities = first.sources
    layout = {c: tuple(first.city_stations[c]) for c in cities}
    for b in bundles[1:]:
        if b.sources != cities or any(
            len(b.city_stations[c]) != len(layout[c]) for c in cities
        ):
            raise ShapeError(
                "Bundles in one batch must share sources and station counts per city."
            )
    groups = [[b.x_stn[sid] for c in cities for sid in b.city_stations[c]] for b in bundles]
    if not groups[0]:
        raise ShapeError("Batch has no source stations.")
    stn_static, stn_series = _stack_stations(groups)
    aux_static = aux_series = None
    if auxiliary is not None:
        if len(auxiliary) != len(bundles):
            raise ShapeError("One auxiliary station list per bundle is needed.")
        if len({len(a) for a in auxiliary}) != 1:
            raise ShapeError("Auxiliary station lists must have equal lengths.")
        if len(auxiliary[0]):
            aux_static, aux_series = _stack_stations(auxiliary)
    return BatchInputs(
        cities=cities,
        city_stations=layout,
        tgt_static=np.stack([b.x_tgt_static.values for b in bundles]),
        tgt_series=np.stack([b.x_tgt_series.values for b in bundles]),
        stn_static=stn_static,
        stn_series=stn_series,
        city=np.stack([np.stack([b.x_city[c].values for c in cities]) for b in bundles]),
        aux_static=aux_static,
        aux_series=aux_series,
    )


@dataclass(frozen=True, eq=False)
class ForwardResult:
    """Output and intermediates of one batched forward pass.

    ``y`` is (batch,), ``y_city`` and ``beta`` are (batch, cities) in the order
    of ``cities``; ``alpha`` maps each city to (batch, stations).
    """

    y: Node
    y_city: Node
    alpha: Mapping[str, Node]
    beta: Node
    cities: tuple[str, ...]
    z_target: Node
    z_stations: Mapping[str, Node]
    z_auxiliary: Node | None = None

    def source_embeddings(self) -> Node:
        """All source-station embeddings of the batch as rows."""
        d = self.z_target.shape[-1]
        pooled = [ad.reshape(z, (-1, d)) for z in self.z_stations.values()]
        return ad.concat(pooled, axis=0)

    def auxiliary_embeddings(self) -> Node | None:
        if self.z_auxiliary is None:
            return None
        return ad.reshape(self.z_auxiliary, (-1, self.z_target.shape[-1]))


def _check_dims(inputs: BatchInputs, dims: InputDims) -> None:
    got = (
        inputs.stn_static.shape[-1],
        inputs.stn_series.shape[-1],
        inputs.tgt_static.shape[-1],
        inputs.tgt_series.shape[-1],
        inputs.city.shape[-1],
    )
    expected = (
        dims.station_static,
        dims.station_series,
        dims.target_static,
        dims.target_series,
        dims.city,
    )
    if got != expected:
        raise ShapeError(f"Input widths {got} do not match the network's {expected}.")


def airex_forward_batch(inputs: BatchInputs, params: AirexParams) -> ForwardResult:
    _check_dims(inputs, params.shape.dims)
    batch = inputs.size
    d = params.shape.embedding_dim
    steps = inputs.stn_series.shape[2]

    z_tgt = encode_target(
        ad.constant(inputs.tgt_static), ad.constant(inputs.tgt_series), params
    )

    static, series = inputs.stn_static, inputs.stn_series
    n_source = static.shape[1]
    if inputs.aux_static is not None:
        static = np.concatenate([static, inputs.aux_static], axis=1)
        series = np.concatenate([series, inputs.aux_series], axis=1)
    n_all = static.shape[1]
    # the shared station encoder sees every station of every sample at once
    z_all = ad.reshape(
        encode_station(
            ad.constant(static.reshape(batch * n_all, -1)),
            ad.constant(series.reshape(batch * n_all, steps, -1)),
            params,
        ),
        (batch, n_all, d),
    )

    alpha: dict[str, Node] = {}
    z_stations: dict[str, Node] = {}
    experts, z_plus, x_city = [], [], []
    for k, (city, span) in enumerate(inputs.city_slices().items()):
        z_k = z_all[:, span, :]
        alpha[city], z_ck = station_attention(z_tgt, z_k, params.attention)
        z_stations[city] = z_k
        experts.append(
            ad.reshape(expert_infer(z_tgt, z_ck, params.expert(city)), (batch, 1))
        )
        z_plus.append(pad_stations(z_k, params.shape.max_stations))
        x_city.append(ad.constant(inputs.city[:, k, :]))

    beta = city_attention(z_tgt, z_plus, x_city, params.attention)
    y_city = ad.concat(experts, axis=-1)
    return ForwardResult(
        y=mixture(beta, y_city),
        y_city=y_city,
        alpha=alpha,
        beta=beta,
        cities=inputs.cities,
        z_target=z_tgt,
        z_stations=z_stations,
        z_auxiliary=z_all[:, n_source:, :] if n_all > n_source else None,
    )


def airex_forward(bundle: FeatureBundle, params: AirexParams) -> ForwardResult:
    """Forward pass of a single bundle (a batch of one)."""
    return airex_forward_batch(stack_bundles([bundle]), params)
