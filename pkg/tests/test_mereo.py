import pytest

from chmereo.mereo import (
    HistoryLibrary,
    ObjectDomain,
    OrderError,
    Partition,
    PartitionHistory,
    UnknownElement,
    boundary_report,
    check_pcr,
    close_order,
    domain_from_dict,
    history_consistent,
    is_strong_partition,
    mutually_exclusive,
    partition_from_dict,
    partition_history_from_list,
    preserves_mereology,
    recognizes,
    strong_location,
    strongly_recognizes,
    validate_library,
)

CAR = ObjectDomain(frozenset({"car", "engine"}), frozenset({("engine", "car")}))
ATOMS = ObjectDomain(frozenset({"a", "b"}))


def overlap_partition(located=("z1", "z2")):
    return Partition(
        frozenset({"z1", "z2", "z12"}),
        frozenset({("z12", "z1"), ("z12", "z2")}),
        frozenset(("x", z) for z in located),
    )


class TestOrder:
    def test_closure(self):
        rel = close_order("abc", [("a", "b"), ("b", "c")])
        assert ("a", "c") in rel
        assert all((e, e) in rel for e in "abc")

    def test_cycle_rejected(self):
        with pytest.raises(OrderError):
            close_order("ab", [("a", "b"), ("b", "a")])
        with pytest.raises(OrderError):
            ObjectDomain(frozenset("abc"), frozenset({("a", "b"), ("b", "c"), ("c", "a")}))

    def test_unknown_element(self):
        with pytest.raises(UnknownElement):
            close_order("a", [("a", "b")])

    def test_extensionality(self):
        parts = frozenset({("p", "w1"), ("p", "w2")})
        ObjectDomain(frozenset({"p", "w1", "w2"}), parts)
        with pytest.raises(ValueError):
            ObjectDomain(frozenset({"p", "w1", "w2"}), parts, extensional=True)

    def test_location_in_unknown_cell(self):
        with pytest.raises(UnknownElement):
            Partition(frozenset({"z"}), locations=frozenset({("x", "w")}))


class TestPCR:
    def test_common_subcell(self):
        assert check_pcr(overlap_partition()) == []

    def test_separated_cells(self):
        p = Partition(frozenset({"z1", "z2"}), locations=frozenset({("x", "z1"), ("x", "z2")}))
        (v,) = check_pcr(p)
        assert v.object == "x"
        assert set(v.cells) == {"z1", "z2"}

    def test_single_cell(self):
        assert check_pcr(overlap_partition(("z1",))) == []

    def test_nested_cells(self):
        # z12 is below z1, so z12 itself is the common subcell
        assert check_pcr(overlap_partition(("z1", "z12"))) == []


class TestRecognizes:
    def test_located(self):
        assert recognizes(overlap_partition(), "x")

    def test_unlocated(self):
        d = ObjectDomain(frozenset({"x", "y"}))
        assert not recognizes(overlap_partition(), "y", d)

    def test_every_located_object(self):
        p = Partition(frozenset({"z"}), locations=frozenset({("a", "z"), ("b", "z")}))
        assert all(recognizes(p, x) for x in p.located_objects)

    def test_unknown_object(self):
        with pytest.raises(UnknownElement):
            recognizes(overlap_partition(), "q", ATOMS)


def car_partition(engine_cell):
    cells = {"z", "z_engine", "w"}
    return Partition(
        frozenset(cells),
        frozenset({("z_engine", "z")}),
        frozenset({("car", "z"), ("engine", engine_cell)}),
    )


class TestPreservesMereology:
    def test_engine_in_subcell(self):
        assert preserves_mereology(car_partition("z_engine"), CAR) == []

    def test_engine_elsewhere(self):
        (v,) = preserves_mereology(car_partition("w"), CAR)
        assert (v.part, v.whole, v.cell) == ("engine", "car", "z")

    def test_engine_in_same_cell(self):
        p = car_partition("z")
        assert preserves_mereology(p, CAR) == []
        assert not strong_location(p, CAR, "engine", "z")

    def test_unlocated_part(self):
        p = Partition(frozenset({"z"}), locations=frozenset({("car", "z")}))
        assert len(preserves_mereology(p, CAR)) == 1


class TestStrongLocation:
    def test_lone_object(self):
        p = Partition(frozenset({"z"}), locations=frozenset({("a", "z")}))
        assert strong_location(p, ATOMS, "a", "z")
        assert strongly_recognizes(p, ATOMS, "a")

    def test_incomparable_pair(self):
        p = Partition(frozenset({"z"}), locations=frozenset({("a", "z"), ("b", "z")}))
        assert not strong_location(p, ATOMS, "a", "z")
        assert not strong_location(p, ATOMS, "b", "z")
        assert not strongly_recognizes(p, ATOMS, "a")
        assert not strongly_recognizes(p, ATOMS, "b")

    def test_car_and_engine(self):
        p = car_partition("z")
        assert strong_location(p, CAR, "car", "z")
        assert not strong_location(p, CAR, "engine", "z")
        assert strongly_recognizes(p, CAR, "car")
        assert not strongly_recognizes(p, CAR, "engine")

    def test_not_located_there(self):
        p = car_partition("z_engine")
        assert not strong_location(p, CAR, "car", "z_engine")

    def test_unknown(self):
        p = car_partition("z")
        with pytest.raises(UnknownElement):
            strong_location(p, CAR, "truck", "z")
        with pytest.raises(UnknownElement):
            strong_location(p, CAR, "car", "nowhere")


class TestStrongPartition:
    def test_empty_cells(self):
        assert is_strong_partition(Partition(frozenset({"z1", "z2"})), ATOMS)

    def test_two_atoms_one_cell(self):
        p = Partition(frozenset({"z"}), locations=frozenset({("a", "z"), ("b", "z")}))
        assert not is_strong_partition(p, ATOMS)

    def test_one_object_per_simple_cell(self):
        p = Partition(
            frozenset({"top", "za", "zb"}),
            frozenset({("za", "top"), ("zb", "top")}),
            frozenset({("a", "za"), ("b", "zb")}),
        )
        assert p.simple_cells == {"za", "zb"}
        assert is_strong_partition(p, ATOMS)

    def test_boundary_report(self):
        p = car_partition("z_engine")
        assert is_strong_partition(p, CAR) and not preserves_mereology(p, CAR)
        assert boundary_report(p, CAR) == {"z": ("car",), "z_engine": ("engine",)}
        # mereology broken: nothing is reported
        assert boundary_report(car_partition("w"), CAR) == {}


class TestPartitionHistory:
    def test_clean_single_step(self):
        ok, violations = history_consistent(PartitionHistory(((0.0, overlap_partition()),)))
        assert ok and violations == []

    def test_violation_carries_time(self):
        bad = Partition(frozenset({"z1", "z2"}), locations=frozenset({("x", "z1"), ("x", "z2")}))
        ok, violations = history_consistent(PartitionHistory(((0.0, overlap_partition()), (1.5, bad))))
        assert not ok
        assert [v.time for v in violations] == [1.5]

    def test_object_moves(self):
        a = Partition(frozenset({"z1", "z2"}), locations=frozenset({("x", "z1")}))
        b = Partition(frozenset({"z1", "z2"}), locations=frozenset({("x", "z2")}))
        ok, _ = history_consistent(PartitionHistory(((0.0, a), (1.0, b))))
        assert ok

    def test_times_increase(self):
        p = overlap_partition()
        with pytest.raises(ValueError):
            PartitionHistory(((1.0, p), (1.0, p)))


def _history(cell):
    return PartitionHistory(
        ((0.0, Partition(frozenset({"z1", "z2"}), locations=frozenset({("x", cell)}))),)
    )


class TestLibrary:
    def test_exclusive_halves(self):
        lib = HistoryLibrary(((_history("z1"), 0.5), (_history("z2"), 0.5)))
        assert mutually_exclusive(_history("z1"), _history("z2"))
        assert validate_library(lib).valid

    def test_sum_defect(self):
        rep = validate_library(HistoryLibrary(((_history("z1"), 0.5), (_history("z2"), 0.4))))
        assert not rep.valid
        assert rep.sum_defect == pytest.approx(0.1, abs=1e-15)

    def test_duplicates(self):
        rep = validate_library(HistoryLibrary(((_history("z1"), 0.5), (_history("z1"), 0.5))))
        assert not rep.valid
        assert rep.non_exclusive == ((0, 1),)

    def test_probability_range(self):
        rep = validate_library(HistoryLibrary(((_history("z1"), 1.5), (_history("z2"), -0.5))))
        assert rep.bad_probabilities == (0, 1)


class TestIngestion:
    def test_round_trip(self):
        d = domain_from_dict({"objects": ["car", "engine"], "parthood": [["engine", "car"]]})
        assert d.part_of("engine", "car") and not d.part_of("car", "engine")
        p = partition_from_dict(
            {"cells": ["z", "ze"], "subcell": [["ze", "z"]], "locations": [["car", "z"], ["engine", "ze"]]}
        )
        assert preserves_mereology(p, d) == []
        h = partition_history_from_list([{"time": 0, "partition": {"cells": ["z"]}}])
        assert h.times == (0.0,)
