import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metanas.config import EnvironmentConfig, Mode, NscSpace
from metanas.nsc import (
    ArchitectureState,
    BadKernel,
    BadPredecessor,
    BadTerminalPlacement,
    BadType,
    EmptyArchitecture,
    NscVector,
    ShapeUnderflow,
    build_graph,
    build_network,
    canonical_key,
    encode_state,
    encoding_width,
    infer_shapes,
    parse_key,
    validate_nsc,
    validate_state,
)

from figures import (
    ALL_DIAGRAMS,
    ENCODING_EXAMPLE_PRINTED,
    ENCODING_EXAMPLE_ROWS,
    MULTIBRANCH_BEST,
    SAMPLED_EXAMPLE,
)

MB = EnvironmentConfig(mode=Mode.MULTI_BRANCH)
CH = EnvironmentConfig(mode=Mode.CHAIN)


def state_of(rows, mode=Mode.MULTI_BRANCH):
    return ArchitectureState.from_lists(rows, mode)


# ---------------------------------------------------------------- validation

def test_first_conv_row_is_valid():
    validate_nsc(NscVector(1, 1, 1, 0, 0), 1, MB)


def test_pool_size_outside_space_is_rejected():
    with pytest.raises(BadKernel):
        validate_nsc(NscVector(1, 2, 5, 0, 0), 1, MB)


def test_identity_type_is_rejected():
    with pytest.raises(BadType):
        validate_nsc(NscVector(1, 4, 0, 0, 0), 1, MB)


def test_forward_reference_is_rejected():
    with pytest.raises(BadPredecessor):
        validate_nsc(NscVector(2, 1, 3, 2, 0), 2, MB)


def test_chain_mode_forbids_merges_and_skips():
    with pytest.raises(BadType):
        validate_nsc(NscVector(3, 5, 0, 2, 1), 3, CH)
    with pytest.raises(BadPredecessor):
        validate_nsc(NscVector(3, 1, 3, 1, 0), 3, CH)


def test_terminal_must_be_last():
    s = state_of([[1, 1, 3, 0, 0], [2, 7, 0, 0, 0], [3, 1, 3, 2, 0]])
    with pytest.raises(BadTerminalPlacement):
        validate_state(s, MB)


def test_sampled_example_validates():
    validate_state(state_of(SAMPLED_EXAMPLE[0]), MB)


# ---------------------------------------------------------------- encoding

def test_widths_for_default_space():
    assert encoding_width(CH) == 25
    assert encoding_width(MB) == 36


@pytest.mark.parametrize("k", [3, 5])
def test_widths_over_depths(k):
    for d in range(1, 21):
        for mode in Mode:
            cfg = EnvironmentConfig(d=d, k=k, mode=mode)
            parts = 8 + (k + 1) + (d + 1) + ((d + 1) if mode == Mode.MULTI_BRANCH else 0)
            assert encoding_width(cfg) == parts
            assert encode_state(ArchitectureState(mode=mode), cfg).shape == (d, parts)


def test_printed_encoding_example():
    cfg = EnvironmentConfig(d=4, k=5, mode=Mode.MULTI_BRANCH)
    enc = encode_state(state_of(ENCODING_EXAMPLE_ROWS), cfg)
    assert enc.shape == (4, 24)
    for row, (typ, kern, p1, p2) in zip(enc, ENCODING_EXAMPLE_PRINTED):
        assert list(row[[0, 1, 6, 7]]) == typ
        assert list(row[8:14]) == kern
        assert list(row[14:19]) == p1
        assert list(row[19:24]) == p2
    # the hidden type positions still hold exactly one hot bit per row
    assert np.all(enc[:, :8].sum(axis=1) == 1)
    assert enc[2, 2] == 1


def test_empty_state_encodes_empty_vectors():
    enc = encode_state(ArchitectureState(mode=Mode.MULTI_BRANCH), MB)
    off_p1 = 8 + MB.k + 1
    off_p2 = off_p1 + MB.d + 1
    assert np.all(enc[:, 0] == 1) and np.all(enc[:, 8] == 1)
    assert np.all(enc[:, off_p1] == 1) and np.all(enc[:, off_p2] == 1)
    assert enc.sum() == 4 * MB.d


def test_encoding_is_binary_with_one_bit_per_field():
    enc = encode_state(state_of(SAMPLED_EXAMPLE[0]), MB)
    assert set(np.unique(enc)) <= {0.0, 1.0}
    assert np.all(enc.sum(axis=1) == 4)


_row = st.tuples(st.sampled_from([1, 2, 3, 5, 6]), st.integers(0, 5), st.integers(0, 9), st.integers(0, 9))


@st.composite
def valid_states(draw, mode=Mode.MULTI_BRANCH, max_len=10):
    n = draw(st.integers(0, max_len))
    vecs = []
    for i in range(1, n + 1):
        if mode == Mode.CHAIN:
            t = draw(st.sampled_from([1, 2, 3]))
        else:
            t = draw(st.sampled_from([1, 2, 3, 5, 6]))
        if t == 1:
            ks = draw(st.sampled_from([1, 3, 5]))
        elif t in (2, 3):
            ks = draw(st.sampled_from([2, 3]))
        else:
            ks = 0
        if mode == Mode.CHAIN:
            p1, p2 = i - 1, 0
        else:
            p1 = draw(st.integers(0, i - 1))
            p2 = draw(st.integers(0, i - 1)) if t in (5, 6) else 0
        vecs.append(NscVector(i, t, ks, p1, p2))
    if n < max_len and draw(st.booleans()):
        vecs.append(NscVector(n + 1, 7))
    return ArchitectureState(tuple(vecs), mode)


@settings(max_examples=300, deadline=None)
@given(valid_states(), valid_states())
def test_encoding_is_injective(a, b):
    same = np.array_equal(encode_state(a, MB), encode_state(b, MB))
    assert same == (a.vectors == b.vectors)


@settings(max_examples=200, deadline=None)
@given(valid_states())
def test_generated_states_validate(state):
    validate_state(state, MB)


@settings(max_examples=200, deadline=None)
@given(valid_states())
def test_canonical_key_round_trip(state):
    env, back = parse_key(canonical_key(state, "dtd"), Mode.MULTI_BRANCH)
    assert env == "dtd" and back == state


def test_parse_key_detects_chain():
    _, s = parse_key("omniglot;1,3,0,0;2,2,1,0")
    assert s.mode == Mode.CHAIN
    _, s = parse_key(canonical_key(state_of(SAMPLED_EXAMPLE[0]), "omniglot"))
    assert s.mode == Mode.MULTI_BRANCH


# ---------------------------------------------------------------- graph + shapes

def test_sampled_example_inventory():
    g = build_graph(state_of(SAMPLED_EXAMPLE[0]))
    assert g.count("pcc") == 3
    assert g.count("maxpool") == 2
    assert g.count("avgpool") == 1
    assert g.count("add") == 1
    assert g.count("concat") == 1
    assert g.auto_merge == 8 and g.output == 8
    assert g.leaves() == [8]


@pytest.mark.parametrize("name", sorted(ALL_DIAGRAMS))
def test_printed_shapes(name):
    rows, printed = ALL_DIAGRAMS[name]
    mode = Mode.MULTI_BRANCH if name.startswith(("sampled", "multibranch")) else Mode.CHAIN
    g = build_network(state_of(rows, mode), EnvironmentConfig(mode=mode))
    got = {nid: g.shape(nid)[0] for nid in printed}
    if name == "multibranch_sigma_0.0":
        pytest.xfail("diagram prints 3x3 for AvgPooling p=3 applied to a 6x6 map; see decisions ledger")
    assert got == printed


def test_multibranch_sigma0_all_other_nodes_match():
    rows, printed = MULTIBRANCH_BEST["sigma_0.0"]
    g = build_network(state_of(rows), MB)
    mismatched = {nid for nid, size in printed.items() if g.shape(nid)[0] != size}
    assert mismatched == {10, 11}
    assert g.shape(10)[0] == 6 // 3


def test_square_inputs_stay_square():
    g = build_network(state_of(SAMPLED_EXAMPLE[0]), MB)
    assert all(n.shape[0] == n.shape[1] for n in g.nodes)


def test_channel_rules():
    g = build_network(state_of(SAMPLED_EXAMPLE[0]), MB)
    assert g.shape(0)[2] == 3
    assert g.shape(2)[2] == 32          # pooling keeps channels
    assert g.shape(7)[2] == 32          # add: max channels
    assert g.shape(8)[2] == 64          # concat: sum of channels
    g = infer_shapes(build_graph(state_of([[1, 2, 2, 0, 0], [2, 1, 1, 0, 0], [3, 5, 0, 1, 2]])))
    assert g.shape(3) == (84, 84, 32)


def test_pool_on_raw_input_keeps_three_channels():
    g = build_network(state_of([[1, 3, 2, 0, 0]], Mode.CHAIN), CH)
    assert g.shape(1) == (42, 42, 3)


def test_add_of_two_inputs_is_single_output():
    s = state_of([[1, 1, 1, 0, 0], [2, 1, 1, 0, 0], [3, 5, 0, 1, 2]])
    g = build_graph(s)
    assert g.auto_merge is None and g.output == 3


def test_empty_architecture_cannot_be_built():
    with pytest.raises(EmptyArchitecture):
        build_graph(ArchitectureState())
    with pytest.raises(EmptyArchitecture):
        build_graph(state_of([[1, 7, 0, 0, 0]]))


def test_pooling_past_one_pixel_underflows():
    rows = [[i, 2, 3, i - 1, 0] for i in range(1, 6)]   # 84 -> 28 -> 9 -> 3 -> 1 -> fail
    with pytest.raises(ShapeUnderflow):
        build_network(state_of(rows, Mode.CHAIN), CH)
    build_network(state_of(rows[:4], Mode.CHAIN), CH)


def test_convolution_larger_than_map_underflows():
    rows = [[1, 2, 3, 0, 0], [2, 2, 3, 1, 0], [3, 2, 3, 2, 0], [4, 1, 5, 3, 0]]  # 3x3 then k=5
    with pytest.raises(ShapeUnderflow):
        build_network(state_of(rows, Mode.CHAIN), CH)


def test_dot_export_lists_every_edge():
    g = build_graph(state_of(SAMPLED_EXAMPLE[0]))
    dot = g.to_dot()
    n_edges = sum(len(n.inputs) for n in g.nodes)
    assert dot.count("->") == n_edges


def test_custom_space_restricts_kernels():
    cfg = EnvironmentConfig(mode=Mode.CHAIN, space=NscSpace(conv_kernels=(3,)))
    with pytest.raises(BadKernel):
        validate_nsc(NscVector(1, 1, 5, 0, 0), 1, cfg)
