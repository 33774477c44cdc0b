"""Environment dynamics, rendering, masks, and predicate grounding."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memgrid.goals import Predicate
from memgrid.world import (
    CELL,
    GRID,
    IMG,
    Action,
    EnvState,
    ObjectState,
    apply_action,
    evaluate_predicate,
    instance_masks,
    render,
    render_with_owner,
    resolve_container,
    step,
)


def make_state(gripper=(4, 4), held=None, **objects):
    return EnvState(gripper=gripper, held=held, objects=objects)


BOWL = lambda cell, inside=None: ObjectState("bowl", cell, inside)
PLATE = lambda cell: ObjectState("plate", cell)
BASKET = lambda cell: ObjectState("basket", cell)
CHEESE = lambda cell, inside=None: ObjectState("cheese", cell, inside)


# ---------------------------------------------------------------------------
# movement


def test_moves_change_one_axis():
    s = make_state(gripper=(3, 3))
    assert apply_action(s, Action.MOVE_E)[0].gripper == (4, 3)
    assert apply_action(s, Action.MOVE_W)[0].gripper == (2, 3)
    assert apply_action(s, Action.MOVE_N)[0].gripper == (3, 2)
    assert apply_action(s, Action.MOVE_S)[0].gripper == (3, 4)


def test_moves_clamp_at_borders():
    s = make_state(gripper=(0, 0))
    assert apply_action(s, Action.MOVE_W)[0].gripper == (0, 0)
    assert apply_action(s, Action.MOVE_N)[0].gripper == (0, 0)
    s = make_state(gripper=(GRID - 1, GRID - 1))
    assert apply_action(s, Action.MOVE_E)[0].gripper == (GRID - 1, GRID - 1)
    assert apply_action(s, Action.MOVE_S)[0].gripper == (GRID - 1, GRID - 1)


def test_clamped_move_is_not_invalid():
    s = make_state(gripper=(0, 0))
    _, info = apply_action(s, Action.MOVE_W)
    assert not info.invalid_action


def test_held_object_follows_gripper():
    s = make_state(gripper=(2, 2), held="bowl_1", bowl_1=BOWL((2, 2)))
    nxt, _ = apply_action(s, Action.MOVE_E)
    assert nxt.objects["bowl_1"].cell == (3, 2)
    assert nxt.held == "bowl_1"


def test_noop_is_identity():
    s = make_state(gripper=(2, 2), bowl_1=BOWL((1, 1)))
    nxt, info = apply_action(s, Action.NOOP)
    assert nxt == s and not info.invalid_action


# ---------------------------------------------------------------------------
# pick


def test_pick_takes_small_object():
    s = make_state(gripper=(1, 1), bowl_1=BOWL((1, 1)))
    nxt, info = apply_action(s, Action.PICK)
    assert nxt.held == "bowl_1" and not info.invalid_action


def test_pick_prefers_small_over_basket():
    s = make_state(gripper=(1, 1), basket_1=BASKET((1, 1)), cheese_1=CHEESE((1, 1)))
    nxt, _ = apply_action(s, Action.PICK)
    assert nxt.held == "cheese_1"


def test_pick_ignores_contained_object_but_takes_basket():
    s = make_state(
        gripper=(1, 1),
        basket_1=BASKET((1, 1)),
        cheese_1=CHEESE((1, 1), inside="basket_1"),
    )
    nxt, _ = apply_action(s, Action.PICK)
    assert nxt.held == "basket_1"
    # the cheese rides inside the moving basket
    nxt, _ = apply_action(nxt, Action.MOVE_S)
    assert nxt.objects["cheese_1"].cell == (1, 2)
    assert nxt.objects["cheese_1"].contained_in == "basket_1"


def test_pick_on_empty_cell_is_invalid_noop():
    s = make_state(gripper=(5, 5), bowl_1=BOWL((1, 1)))
    nxt, info = apply_action(s, Action.PICK)
    assert info.invalid_action and nxt == s


def test_pick_while_holding_is_invalid():
    s = make_state(gripper=(1, 1), held="bowl_1", bowl_1=BOWL((1, 1)), cheese_1=CHEESE((1, 1)))
    nxt, info = apply_action(s, Action.PICK)
    assert info.invalid_action and nxt.held == "bowl_1"


def test_pick_never_takes_plates():
    s = make_state(gripper=(1, 1), plate_1=PLATE((1, 1)))
    _, info = apply_action(s, Action.PICK)
    assert info.invalid_action


def test_picking_contained_object_clears_containment():
    s = make_state(
        gripper=(1, 1),
        basket_1=BASKET((2, 2)),
        cheese_1=CHEESE((1, 1), inside=None),
    )
    nxt, _ = apply_action(s, Action.PICK)
    assert nxt.objects["cheese_1"].contained_in is None


# ---------------------------------------------------------------------------
# place


def test_place_small_into_basket_sets_containment():
    s = make_state(gripper=(1, 1), held="cheese_1", cheese_1=CHEESE((1, 1)), basket_1=BASKET((1, 1)))
    nxt, info = apply_action(s, Action.PLACE)
    assert not info.invalid_action
    assert nxt.held is None
    assert nxt.objects["cheese_1"].contained_in == "basket_1"


def test_place_small_onto_plate_rests_on_it():
    s = make_state(gripper=(1, 1), held="bowl_1", bowl_1=BOWL((1, 1)), plate_1=PLATE((1, 1)))
    nxt, info = apply_action(s, Action.PLACE)
    assert not info.invalid_action
    assert nxt.objects["bowl_1"].contained_in is None
    assert nxt.objects["bowl_1"].cell == (1, 1)
    assert evaluate_predicate(Predicate("on", "bowl_1", "plate_1"), nxt)


def test_place_blocked_by_loose_small_object():
    s = make_state(gripper=(1, 1), held="bowl_1", bowl_1=BOWL((1, 1)), cheese_1=CHEESE((1, 1)))
    nxt, info = apply_action(s, Action.PLACE)
    assert info.invalid_action and nxt.held == "bowl_1"


def test_place_basket_on_plate_or_basket_is_invalid():
    s = make_state(gripper=(1, 1), held="basket_1", basket_1=BASKET((1, 1)), plate_1=PLATE((1, 1)))
    assert apply_action(s, Action.PLACE)[1].invalid_action
    s = make_state(gripper=(1, 1), held="basket_1", basket_1=BASKET((1, 1)), basket_2=BASKET((1, 1)))
    assert apply_action(s, Action.PLACE)[1].invalid_action


def test_place_with_empty_gripper_is_invalid():
    s = make_state(gripper=(1, 1))
    assert apply_action(s, Action.PLACE)[1].invalid_action


def test_place_on_bare_cell():
    s = make_state(gripper=(6, 6), held="bowl_1", bowl_1=BOWL((6, 6)))
    nxt, info = apply_action(s, Action.PLACE)
    assert not info.invalid_action and nxt.held is None
    assert nxt.objects["bowl_1"].cell == (6, 6)


def test_place_basket_with_content_moves_content():
    s = make_state(
        gripper=(5, 5),
        held="basket_1",
        basket_1=BASKET((5, 5)),
        cheese_1=CHEESE((5, 5), inside="basket_1"),
    )
    nxt, _ = apply_action(s, Action.PLACE)
    assert nxt.objects["cheese_1"].cell == (5, 5)
    assert nxt.objects["cheese_1"].contained_in == "basket_1"


def test_transitions_do_not_mutate_input_state():
    s = make_state(gripper=(1, 1), bowl_1=BOWL((1, 1)))
    before = dict(s.objects)
    apply_action(s, Action.PICK)
    apply_action(s, Action.MOVE_E)
    assert s.objects == before and s.held is None


# ---------------------------------------------------------------------------
# rendering and masks


def test_render_shape_dtype_range():
    frame = render(make_state(bowl_1=BOWL((2, 3))))
    assert frame.shape == (IMG, IMG, 3)
    assert frame.dtype == np.float32
    assert frame.min() >= 0.0 and frame.max() <= 1.0


def test_render_is_deterministic():
    s = make_state(bowl_1=BOWL((2, 3)), plate_1=PLATE((2, 3)))
    assert np.array_equal(render(s), render(s))


def test_same_class_instances_render_identically():
    f1 = render(make_state(gripper=(0, 0), bowl_1=BOWL((5, 5))))
    f2 = render(make_state(gripper=(0, 0), bowl_2=BOWL((5, 5))))
    assert np.array_equal(f1, f2)


def test_held_and_contained_objects_are_hidden():
    base = make_state(gripper=(0, 0))
    s_held = make_state(gripper=(0, 0), held="bowl_1", bowl_1=BOWL((5, 5)))
    assert np.array_equal(render(base), render(s_held))
    s_in = make_state(
        gripper=(0, 0), basket_1=BASKET((5, 5)), cheese_1=CHEESE((5, 5), inside="basket_1")
    )
    s_empty = make_state(gripper=(0, 0), basket_1=BASKET((5, 5)))
    assert np.array_equal(render(s_in), render(s_empty))


def test_gripper_renders_as_hollow_ring_instance():
    s = make_state(gripper=(3, 3))
    masks = instance_masks(s)
    assert "gripper" in masks
    ring = masks["gripper"][3 * CELL : 4 * CELL, 3 * CELL : 4 * CELL]
    assert ring[0].all() and ring[-1].all() and ring[:, 0].all() and ring[:, -1].all()
    assert not ring[1:-1, 1:-1].any()  # hollow: interior shows what's beneath


def test_object_under_gripper_shows_through_ring():
    s = make_state(gripper=(3, 3), bowl_1=BOWL((3, 3)))
    masks = instance_masks(s)
    assert masks["bowl_1"].any()  # bowl pixels visible inside the ring
    assert not (masks["bowl_1"] & masks["gripper"]).any()


def test_masks_partition_foreground():
    s = make_state(
        gripper=(2, 2),
        bowl_1=BOWL((2, 2)),
        plate_1=PLATE((2, 2)),
        basket_1=BASKET((4, 4)),
        cheese_1=CHEESE((6, 1)),
    )
    frame, owner, ids = render_with_owner(s)
    masks = instance_masks(s)
    union = np.zeros((IMG, IMG), dtype=bool)
    for i, oid in enumerate(ids):
        m = masks[oid]
        assert not (union & m).any()  # pairwise disjoint
        union |= m
    assert np.array_equal(union, owner >= 0)  # cover exactly the foreground


def test_draw_order_small_on_surface():
    s = make_state(gripper=(0, 0), bowl_1=BOWL((3, 3)), plate_1=PLATE((3, 3)))
    masks = instance_masks(s)
    block = (slice(3 * CELL, 4 * CELL), slice(3 * CELL, 4 * CELL))
    assert masks["bowl_1"][block].sum() == 36  # bowl sprite on top
    assert masks["plate_1"][block].sum() == 64 - 36  # plate fills the rest


def test_step_returns_frame_and_annotations():
    s = make_state(gripper=(1, 1), bowl_1=BOWL((1, 1)))
    nxt, frame, ann = step(s, Action.PICK)
    assert nxt.held == "bowl_1"
    assert ann.held == "bowl_1" and not ann.invalid_action
    assert ann.instance_ids == ("bowl_1", "gripper")
    assert not ann.masks["bowl_1"].any()  # held -> hidden
    assert frame.shape == (IMG, IMG, 3)


# ---------------------------------------------------------------------------
# predicates


def test_on_requires_same_cell_and_rest():
    s = make_state(gripper=(1, 1), bowl_1=BOWL((1, 1)), plate_1=PLATE((1, 1)))
    assert evaluate_predicate(Predicate("on", "bowl_1", "plate_1"), s)
    held = make_state(gripper=(1, 1), held="bowl_1", bowl_1=BOWL((1, 1)), plate_1=PLATE((1, 1)))
    assert not evaluate_predicate(Predicate("on", "bowl_1", "plate_1"), held)
    apart = make_state(bowl_1=BOWL((0, 0)), plate_1=PLATE((1, 1)))
    assert not evaluate_predicate(Predicate("on", "bowl_1", "plate_1"), apart)


def test_in_resolves_contain_region_suffix():
    s = make_state(
        basket_1=BASKET((2, 2)), cheese_1=CHEESE((2, 2), inside="basket_1")
    )
    assert evaluate_predicate(Predicate("in", "cheese_1", "basket_1_contain_region"), s)
    assert evaluate_predicate(Predicate("in", "cheese_1", "basket_1"), s)
    assert not evaluate_predicate(Predicate("in", "cheese_1", "basket_2_contain_region"), make_state(
        basket_1=BASKET((2, 2)), basket_2=BASKET((3, 3)), cheese_1=CHEESE((2, 2), inside="basket_1")
    ))


def test_lifted_tracks_held():
    s = make_state(gripper=(1, 1), held="bowl_1", bowl_1=BOWL((1, 1)))
    assert evaluate_predicate(Predicate("lifted", "bowl_1"), s)
    assert not evaluate_predicate(Predicate("lifted", "bowl_1"), make_state(bowl_1=BOWL((1, 1))))


def test_unknown_identifiers_raise():
    s = make_state(bowl_1=BOWL((1, 1)))
    with pytest.raises(KeyError):
        evaluate_predicate(Predicate("on", "ghost", "bowl_1"), s)
    with pytest.raises(KeyError):
        evaluate_predicate(Predicate("on", "bowl_1", "ghost"), s)
    with pytest.raises(KeyError):
        resolve_container("ghost_contain_region", s)


# ---------------------------------------------------------------------------
# properties


@settings(max_examples=80, deadline=None)
@given(
    gx=st.integers(0, GRID - 1),
    gy=st.integers(0, GRID - 1),
    actions=st.lists(st.sampled_from(list(Action)), min_size=1, max_size=25),
)
def test_random_action_sequences_keep_invariants(gx, gy, actions):
    s = EnvState(
        gripper=(gx, gy),
        held=None,
        objects={
            "bowl_1": BOWL((2, 2)),
            "plate_1": PLATE((2, 2)),
            "basket_1": BASKET((5, 3)),
            "cheese_1": CHEESE((6, 6)),
        },
    )
    for a in actions:
        s, _ = apply_action(s, a)
        # gripper stays on the board
        assert 0 <= s.gripper[0] < GRID and 0 <= s.gripper[1] < GRID
        # held object, if any, is at the gripper cell and uncontained
        if s.held is not None:
            ho = s.objects[s.held]
            assert ho.cell == s.gripper and ho.contained_in is None
        # contained objects share their container's cell; containers are baskets
        for oid, obj in s.objects.items():
            if obj.contained_in is not None:
                assert s.objects[obj.contained_in].cls == "basket"
                assert obj.cell == s.objects[obj.contained_in].cell
        # masks partition the foreground every step
        _, owner, ids = render_with_owner(s)
        masks = instance_masks(s)
        union = np.zeros((IMG, IMG), dtype=bool)
        for oid in ids:
            assert not (union & masks[oid]).any()
            union |= masks[oid]
        assert np.array_equal(union, owner >= 0)
