"""
Unit tests for the VLC message-length sweep.
"""
import pytest

from src.services.scenario import NoiseModel, load_bundled_scenario
from src.services.sweep import (
    WALKING_GATE_GROWTH,
    SweepRow,
    message_length_sweep,
    parse_lengths,
    walking_variant,
)


class TestParseLengths:
    def test_range_gives_even_lengths(self):
        assert parse_lengths("14..26") == [14, 16, 18, 20, 22, 24, 26]

    def test_comma_list(self):
        assert parse_lengths("18, 22") == [18, 22]

    @pytest.mark.parametrize("text", ["12..18", "18,30", "", "20..14", "a,b"])
    def test_rejected(self, text):
        with pytest.raises(ValueError):
            parse_lengths(text)


class TestWalkingVariant:
    def test_walker_passes_scripted_position_at_event_time(self):
        variant = walking_variant(load_bundled_scenario("vlc_single_3m"), packet_bits=18)
        assert len(variant.events) == 1
        assert variant.condition == "low-light-3m-walking"
        bob = variant.actor("bob")
        assert bob.position_at(300.0) == pytest.approx((0.0, 0.0, 3.0))
        assert bob.position_at(1300.0) == pytest.approx((1.2, 0.0, 3.0))
        assert variant.duration_ms == pytest.approx(300.0 + 20 * 1000.0 / 30)

    def test_only_the_walking_variant_grows_the_gate(self):
        scenario = load_bundled_scenario("vlc_single_3m")
        assert scenario.vlc.max_gate_growth == 1.0
        assert walking_variant(scenario).vlc.max_gate_growth == WALKING_GATE_GROWTH

    def test_needs_vlc(self):
        with pytest.raises(ValueError):
            walking_variant(load_bundled_scenario("uwb_single_3m"))


class TestSweep:
    def test_static_decodes_every_length(self):
        rows = message_length_sweep(load_bundled_scenario("vlc_single_3m"), [14, 18, 26], motion="static", trials=2)
        assert [(r.packet_bits, r.success_rate) for r in rows] == [(14, 1.0), (18, 1.0), (26, 1.0)]
        # two events per trial
        assert (rows[0].trials, rows[0].signals) == (2, 4)

    def test_walking_success_decays_with_length(self):
        rows = message_length_sweep(
            load_bundled_scenario("vlc_single_3m"), [18, 22, 26], motion="walking", trials=400
        )
        rates = {r.packet_bits: r.success_rate for r in rows}
        assert rates[18] == pytest.approx(0.90, abs=0.05)
        # same seeds at every length: a trial lost at n bits is lost at every longer length
        ordered = [rates[n] for n in sorted(rates)]
        assert ordered == sorted(ordered, reverse=True)
        assert rates[26] > 0.7
        assert rates[26] < rates[18]

    def test_walking_without_motion_error_decodes_every_length(self):
        rows = message_length_sweep(
            load_bundled_scenario("vlc_single_3m"), [18, 26], motion="walking", noise=NoiseModel(), trials=2
        )
        assert [r.success_rate for r in rows] == [1.0, 1.0]

    def test_unknown_motion(self):
        with pytest.raises(ValueError):
            message_length_sweep(load_bundled_scenario("vlc_single_3m"), [18], motion="running")

    def test_row_dict(self):
        assert SweepRow(18, "walking", 20, 20, 18).to_dict() == {
            "packet_bits": 18,
            "motion": "walking",
            "trials": 20,
            "signals": 20,
            "successes": 18,
            "success_rate": 0.9,
        }
