import json

import numpy as np
import pytest

from handover.core import ActionClass, ActionScores
from handover.fusion import (
    FsmState,
    FusedSample,
    Pipeline,
    ReleaseFsm,
    SyncConfig,
    SyncResult,
    TorqueEvent,
    fsm_step,
    replay_episode_log,
    run_episode,
    synchronize,
    torque_event_stream,
    vision_verdict_stream,
    write_episode_log,
)
from handover.synth import FaultProfile, ScenarioScript, generate_scenario
from handover.vision_gate import VisionVerdict


def scores_for(action):
    probs = np.zeros(6)
    probs[int(action)] = 1.0
    return ActionScores.from_probabilities(probs)


def verdict(vote, ts, fingers=None):
    if fingers is None:
        fingers = 4 if vote else 0
    return VisionVerdict(
        vote=vote, fingers_in_slab=fingers,
        thumb_in_slab=bool(vote or fingers >= 4), evaluated_at=ts,
    )


def fused(action, vision_vote, ts, fingers=None):
    v = verdict(vision_vote, ts, fingers)
    tq_vote = action in (ActionClass.HOLD, ActionClass.PULL, ActionClass.PULL_UP)
    return FusedSample(
        torque=TorqueEvent(scores=scores_for(action), timestamp=ts),
        vision=v,
        fused_vote=tq_vote and v.vote,
        skew_ms=0,
    )


class TestSynchronize:
    def torque_at(self, *stamps):
        return [TorqueEvent(scores=scores_for(ActionClass.PULL), timestamp=t) for t in stamps]

    def test_pairs_within_window(self):
        result = synchronize(self.torque_at(1000), [verdict(True, 960)], SyncConfig())
        assert len(result.samples) == 1
        assert result.samples[0].skew_ms == 40
        assert result.dropped_torque_events == 0

    def test_drops_event_outside_window(self):
        result = synchronize(self.torque_at(1000), [verdict(True, 880)], SyncConfig())
        assert result.samples == []
        assert result.dropped_torque_events == 1

    def test_tie_goes_to_later_verdict(self):
        verdicts = [verdict(False, 960), verdict(True, 1040)]
        result = synchronize(self.torque_at(1000), verdicts, SyncConfig())
        assert result.samples[0].vision.evaluated_at == 1040
        assert result.samples[0].skew_ms == -40

    def test_prefers_nearest_not_latest(self):
        verdicts = [verdict(True, 990), verdict(False, 1080)]
        result = synchronize(self.torque_at(1000), verdicts, SyncConfig())
        assert result.samples[0].vision.evaluated_at == 990

    def test_out_of_order_torque_rejected(self):
        events = self.torque_at(1000, 900)
        with pytest.raises(ValueError, match="out of order"):
            synchronize(events, [verdict(True, 950)], SyncConfig())

    def test_out_of_order_vision_rejected(self):
        with pytest.raises(ValueError, match="out of order"):
            synchronize(self.torque_at(1000), [verdict(True, 950), verdict(True, 940)], SyncConfig())

    def test_output_is_time_ordered_and_skew_bounded(self, rng):
        config = SyncConfig(pairing_window_ms=60)
        t_stamps = sorted(int(v) for v in rng.integers(0, 3000, 40))
        v_stamps = sorted(int(v) for v in rng.integers(0, 3000, 55))
        events = self.torque_at(*t_stamps)
        verdicts = [verdict(bool(rng.random() < 0.5), t) for t in v_stamps]
        result = synchronize(events, verdicts, config)
        stamps = [s.torque.timestamp for s in result.samples]
        assert stamps == sorted(stamps)
        assert all(abs(s.skew_ms) <= 60 for s in result.samples)
        assert len(result.samples) + result.dropped_torque_events == len(events)

    def test_matches_brute_force_pairing_oracle(self, rng):
        config = SyncConfig(pairing_window_ms=70)
        for _ in range(30):
            t_stamps = sorted(int(v) for v in rng.integers(0, 2000, 25))
            v_stamps = sorted(int(v) for v in rng.integers(0, 2000, 20))
            events = self.torque_at(*t_stamps)
            verdicts = [verdict(bool(rng.random() < 0.5), t) for t in v_stamps]
            got = synchronize(events, verdicts, config)
            # oracle: scan every verdict for each event
            want = []
            for e in events:
                best = None
                for v in verdicts:
                    gap = abs(e.timestamp - v.evaluated_at)
                    if gap > config.pairing_window_ms:
                        continue
                    key = (gap, -v.evaluated_at)
                    if best is None or key < best[0]:
                        best = (key, v)
                if best is not None:
                    want.append((e.timestamp, best[1].evaluated_at))
            assert [(s.torque.timestamp, s.vision.evaluated_at) for s in got.samples] == want

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SyncConfig(pairing_window_ms=0)
        with pytest.raises(ValueError):
            SyncConfig(debounce_frames=0)


class TestFusedSample:
    @pytest.mark.parametrize("tq,vi", [(True, True), (True, False), (False, True), (False, False)])
    def test_and_truth_table(self, tq, vi):
        action = ActionClass.PULL if tq else ActionClass.PUSH
        sample = fused(action, vi, ts=100)
        assert sample.fused_vote == (tq and vi)

    def test_wrong_fused_vote_rejected(self):
        with pytest.raises(ValueError, match="AND"):
            FusedSample(
                torque=TorqueEvent(scores=scores_for(ActionClass.PUSH), timestamp=0),
                vision=verdict(True, 0),
                fused_vote=True,
                skew_ms=0,
            )

    def test_json_roundtrip(self):
        sample = fused(ActionClass.PULL, True, ts=1500)
        back = FusedSample.from_json_dict(sample.to_json_dict())
        assert back.fused_vote == sample.fused_vote
        assert back.torque.timestamp == 1500


class TestReleaseFsm:
    def test_three_consecutive_trues_release_on_third(self):
        fsm = ReleaseFsm(SyncConfig(debounce_frames=3))
        decisions = [fsm.step(fused(ActionClass.PULL, True, ts)) for ts in (100, 200, 300)]
        assert decisions[0] is None and decisions[1] is None
        decision = decisions[2]
        assert decision is not None and decision.release
        assert decision.action is ActionClass.PULL
        assert decision.decided_at == 300
        assert fsm.state is FsmState.RELEASED

    def test_transitions_pass_through_all_states(self):
        fsm = ReleaseFsm(SyncConfig(debounce_frames=2))
        fsm.step(fused(ActionClass.HOLD, True, 10))
        fsm.step(fused(ActionClass.HOLD, True, 20))
        names = [(a.value, b.value) for _, a, b in fsm.transitions]
        assert names == [
            ("holding_idle", "contact_pending"),
            ("contact_pending", "release_armed"),
            ("release_armed", "released"),
        ]

    def test_push_stream_never_releases(self):
        fsm = ReleaseFsm(SyncConfig(debounce_frames=3))
        for ts in range(0, 1000, 100):
            assert fsm.step(fused(ActionClass.PUSH, True, ts)) is None
        assert fsm.state is FsmState.CONTACT_PENDING

    def test_pull_without_vision_never_releases(self):
        fsm = ReleaseFsm(SyncConfig(debounce_frames=3))
        for ts in range(0, 1000, 100):
            assert fsm.step(fused(ActionClass.PULL, False, ts)) is None
        assert fsm.state is FsmState.HOLDING_IDLE

    def test_debounce_counter_resets_on_false(self):
        fsm = ReleaseFsm(SyncConfig(debounce_frames=3))
        votes = [True, True, False, True, True, True]
        released_at = None
        for k, vote in enumerate(votes, start=1):
            sample = fused(ActionClass.PULL, vote, ts=k, fingers=4 if vote else 2)
            decision = fsm.step(sample)
            if decision is not None:
                released_at = k
        assert released_at == 6

    def test_contact_without_votes_parks_in_contact_pending(self):
        fsm = ReleaseFsm(SyncConfig(debounce_frames=3))
        # two fingers in the slab: contact, but no release vote
        fsm.step(fused(ActionClass.PULL, False, 50, fingers=2))
        assert fsm.state is FsmState.CONTACT_PENDING

    def test_stepping_released_state_rejected(self):
        fsm = ReleaseFsm(SyncConfig(debounce_frames=1))
        assert fsm.step(fused(ActionClass.PULL, True, 10)) is not None
        with pytest.raises(ValueError, match="released"):
            fsm.step(fused(ActionClass.PULL, True, 20))

    def test_at_most_one_decision(self):
        fsm = ReleaseFsm(SyncConfig(debounce_frames=2))
        emitted = []
        for ts in range(6):
            if fsm.state is FsmState.RELEASED:
                break
            decision = fsm.step(fused(ActionClass.HOLD, True, ts))
            if decision:
                emitted.append(decision)
        assert len(emitted) == 1

    def test_functional_wrapper(self):
        fsm = ReleaseFsm(SyncConfig(debounce_frames=1))
        state, decision = fsm_step(fsm, fused(ActionClass.PULL, True, 5))
        assert state is FsmState.RELEASED
        assert decision is not None

    def test_monotone_safety_when_one_modality_stays_false(self, rng):
        # random vote streams: if either modality is false all episode, the
        # FSM must never release
        for trial in range(40):
            mute_torque = trial % 2 == 0
            fsm = ReleaseFsm(SyncConfig(debounce_frames=2))
            for ts in range(30):
                if mute_torque:
                    action = ActionClass.PUSH
                    vision = bool(rng.random() < 0.7)
                else:
                    action = ActionClass.PULL if rng.random() < 0.7 else ActionClass.BUMP
                    vision = False
                decision = fsm.step(fused(action, vision, ts, fingers=2 if not vision else 4))
                assert decision is None
            assert fsm.state is not FsmState.RELEASED


class TestRunEpisode:
    def test_pull_scenario_releases(self, small_model):
        net, stats, _ = small_model
        script = generate_scenario(ActionClass.PULL, FaultProfile.clean(), seed=41)
        outcome = run_episode(script, net, stats)
        assert outcome.released
        assert outcome.decision is not None
        assert outcome.decision.action in (ActionClass.PULL, ActionClass.HOLD, ActionClass.PULL_UP)
        assert outcome.release_time_ms is not None
        assert outcome.release_time_ms >= script.action_onset_ms

    def test_bump_scenario_stays_closed(self, small_model):
        net, stats, _ = small_model
        script = generate_scenario(ActionClass.BUMP, FaultProfile.clean(), seed=42)
        outcome = run_episode(script, net, stats)
        assert not outcome.released
        assert outcome.decision is None

    def test_vision_only_wrongly_releases_on_push(self, small_model):
        net, stats, _ = small_model
        script = generate_scenario(ActionClass.PUSH, FaultProfile.clean(), seed=43)
        fused_out = run_episode(script, net, stats, pipeline=Pipeline.FUSED)
        vision_out = run_episode(script, net, stats, pipeline=Pipeline.VISION_ONLY)
        assert not fused_out.released  # torque vetoes the wrap
        assert vision_out.released

    def test_torque_only_releases_on_pull(self, small_model):
        net, stats, _ = small_model
        script = generate_scenario(ActionClass.PULL, FaultProfile.clean(), seed=44)
        outcome = run_episode(script, net, stats, pipeline=Pipeline.TORQUE_ONLY)
        assert outcome.released

    def test_deterministic_across_reruns(self, small_model):
        net, stats, _ = small_model
        script = generate_scenario(ActionClass.HOLD, FaultProfile.clean(), seed=45)
        a = run_episode(script, net, stats)
        b = run_episode(script, net, stats)
        assert a.events == b.events
        assert a.release_time_ms == b.release_time_ms

    def test_fused_samples_respect_and_gate(self, small_model):
        net, stats, _ = small_model
        script = generate_scenario(ActionClass.HOLD, FaultProfile.clean(), seed=46)
        events = torque_event_stream(script, net, stats)
        verdicts = vision_verdict_stream(script)
        result = synchronize(events, verdicts, SyncConfig())
        assert result.samples, "expected paired samples"
        for sample in result.samples:
            tq = sample.torque.scores.predicted in (
                ActionClass.HOLD, ActionClass.PULL, ActionClass.PULL_UP,
            )
            assert sample.fused_vote == (tq and sample.vision.vote)

    def test_empty_vision_stream_rejected(self, small_model):
        net, stats, _ = small_model
        script = generate_scenario(ActionClass.PULL, FaultProfile.clean(), seed=47)
        stripped = ScenarioScript(
            action=script.action, torques=script.torques,
            torque_start_ms=script.torque_start_ms, frames=(),
            slab=script.slab, faults=script.faults,
            action_onset_ms=script.action_onset_ms, grasp_at_ms=script.grasp_at_ms,
        )
        with pytest.raises(ValueError, match="vision frames|non-empty"):
            run_episode(stripped, net, stats, pipeline=Pipeline.VISION_ONLY)
        with pytest.raises(ValueError, match="non-empty"):
            run_episode(stripped, net, stats, pipeline=Pipeline.FUSED)


class TestEpisodeLogReplay:
    def run_and_log(self, small_model, tmp_path, action, pipeline, seed):
        net, stats, _ = small_model
        script = generate_scenario(action, FaultProfile.clean(), seed=seed)
        outcome = run_episode(script, net, stats, pipeline=pipeline)
        path = tmp_path / f"{pipeline.value}_{action.name}.jsonl"
        write_episode_log(path, outcome)
        return path, outcome

    @pytest.mark.parametrize("pipeline", list(Pipeline))
    def test_replay_reproduces_decisions(self, small_model, tmp_path, pipeline):
        path, outcome = self.run_and_log(small_model, tmp_path, ActionClass.PULL, pipeline, 50)
        result = replay_episode_log(path)
        assert result.matched, result.mismatches
        assert result.released == outcome.released
        assert result.release_time_ms == outcome.release_time_ms

    def test_replay_detects_tampered_summary(self, small_model, tmp_path):
        path, _ = self.run_and_log(small_model, tmp_path, ActionClass.PULL, Pipeline.FUSED, 51)
        lines = path.read_text().splitlines()
        doc = json.loads(lines[-1])
        assert doc["type"] == "summary"
        doc["released"] = not doc["released"]
        lines[-1] = json.dumps(doc, sort_keys=True)
        path.write_text("\n".join(lines) + "\n")
        result = replay_episode_log(path)
        assert not result.matched
        assert any("released differs" in m for m in result.mismatches)

    def test_replay_requires_header(self, tmp_path):
        path = tmp_path / "broken.jsonl"
        path.write_text('{"type": "summary", "released": false}\n')
        with pytest.raises(ValueError, match="header"):
            replay_episode_log(path)
