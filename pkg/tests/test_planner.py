"""Planner: prompt construction, offline stub, and the live client contract."""

import pytest

from promo.errors import PlannerError, PlannerTransportError
from promo.planner import (
    EndpointConfig,
    PlannerRequest,
    build_prompt,
    parse_plan_text,
    plan_motion,
    stub_plan,
)

KEY_ENV = "PROMO_LLM_API_KEY"

GOOD_BLOCK = "The left knee is straight. The torso is vertical."


def _three_pose_reply():
    return "\n".join(f"POSE {k}: {GOOD_BLOCK}" for k in (1, 2, 3))


class TestBuildPrompt:
    def test_contains_all_five_rules_and_consistency_instruction(self):
        system, user = build_prompt(PlannerRequest("spin around", 4, 20))
        for header in ("1. Bending", "2. Distance", "3. Relative position",
                       "4. Orientation", "5. Ground contact"):
            assert header in system
        assert "temporally consistent" in system
        assert "spin around" in user

    def test_format_section_enumerates_requested_frames(self):
        system, _ = build_prompt(PlannerRequest("jump", 3, 20))
        for k in (1, 2, 3):
            assert f"POSE {k}:" in system
        assert "POSE 4:" not in system

    def test_byte_stable(self):
        a = build_prompt(PlannerRequest("wave hello", 5, 30))
        b = build_prompt(PlannerRequest("wave hello", 5, 30))
        assert a == b

    def test_request_validation(self):
        with pytest.raises(PlannerError):
            PlannerRequest("x", 0, 20)
        with pytest.raises(PlannerError):
            PlannerRequest("x", 40, 20)
        with pytest.raises(PlannerError):
            PlannerRequest("x", 3, 17)
        with pytest.raises(PlannerError):
            PlannerRequest("   ", 3, 20)


class TestStubPlan:
    def test_jump_middle_script_has_foot_off_ground(self):
        resp = stub_plan(PlannerRequest("Jump on one foot", 3, 20))
        assert len(resp.scripts) == 3
        middle = resp.scripts[1]
        assert any(
            c.category == "ground_contact" and c.qualifier == "off ground"
            and "foot" in c.subjects[0]
            for c in middle.clauses
        )

    def test_unknown_prompt_neutral_plan(self):
        resp = stub_plan(PlannerRequest("contemplate the universe", 5, 20))
        assert len(resp.scripts) == 5

    def test_deterministic(self):
        a = stub_plan(PlannerRequest("walk forward", 4, 20))
        b = stub_plan(PlannerRequest("walk forward", 4, 20))
        assert a == b

    @pytest.mark.parametrize("frames", [1, 2, 3, 7, 16])
    def test_resampling_always_hits_requested_length(self, frames):
        resp = stub_plan(PlannerRequest("squat low", frames, 20))
        assert len(resp.scripts) == frames

    def test_endpoints_preserved_when_upsampling(self):
        short = stub_plan(PlannerRequest("take a bow", 3, 20))
        long = stub_plan(PlannerRequest("take a bow", 9, 20))
        assert long.scripts[0] == short.scripts[0]
        assert long.scripts[-1] == short.scripts[-1]


class TestParsePlanText:
    def test_splits_on_pose_markers(self):
        scripts = parse_plan_text(_three_pose_reply(), 3)
        assert len(scripts) == 3

    def test_wrong_block_count_rejected(self):
        with pytest.raises(PlannerError):
            parse_plan_text(_three_pose_reply(), 4)

    def test_unparseable_block_rejected(self):
        text = f"POSE 1: {GOOD_BLOCK}\nPOSE 2: mumble mumble."
        with pytest.raises(PlannerError):
            parse_plan_text(text, 2)


class TestPlanMotion:
    def _cfg(self, server, retries=2):
        return EndpointConfig(base_url=server.base_url, model="test-model",
                              timeout_s=2.0, max_retries=retries,
                              retry_backoff_s=0.01)

    def test_missing_api_key(self, mock_llm, monkeypatch):
        monkeypatch.delenv(KEY_ENV, raising=False)
        with pytest.raises(PlannerError, match=KEY_ENV):
            plan_motion(PlannerRequest("jump", 3, 20), self._cfg(mock_llm))

    def test_success_path_preserves_raw_text(self, mock_llm, monkeypatch):
        monkeypatch.setenv(KEY_ENV, "sk-test")
        reply = _three_pose_reply()
        mock_llm.push(reply)
        resp = plan_motion(PlannerRequest("jump", 3, 20), self._cfg(mock_llm))
        assert len(resp.scripts) == 3
        assert resp.raw_text == reply
        assert len(mock_llm.requests) == 1
        assert mock_llm.requests[0]["model"] == "test-model"
        roles = [m["role"] for m in mock_llm.requests[0]["messages"]]
        assert roles == ["system", "user"]

    def test_short_reply_triggers_one_repair(self, mock_llm, monkeypatch):
        monkeypatch.setenv(KEY_ENV, "sk-test")
        short = f"POSE 1: {GOOD_BLOCK}\nPOSE 2: {GOOD_BLOCK}"
        mock_llm.push(short, _three_pose_reply())
        resp = plan_motion(PlannerRequest("jump", 3, 20), self._cfg(mock_llm))
        assert len(resp.scripts) == 3
        assert len(mock_llm.requests) == 2
        # the repair turn carries the failed reply back as assistant context
        repair_roles = [m["role"] for m in mock_llm.requests[1]["messages"]]
        assert repair_roles == ["system", "user", "assistant", "user"]

    def test_repair_failure_surfaces_error(self, mock_llm, monkeypatch):
        monkeypatch.setenv(KEY_ENV, "sk-test")
        short = f"POSE 1: {GOOD_BLOCK}"
        mock_llm.push(short, short)
        with pytest.raises(PlannerError, match="pose blocks"):
            plan_motion(PlannerRequest("jump", 3, 20), self._cfg(mock_llm))
        assert len(mock_llm.requests) == 2

    def test_server_errors_exhaust_retries(self, mock_llm, monkeypatch):
        monkeypatch.setenv(KEY_ENV, "sk-test")
        mock_llm.push(500, 500, 500)
        with pytest.raises(PlannerTransportError) as exc:
            plan_motion(PlannerRequest("jump", 3, 20), self._cfg(mock_llm, retries=2))
        assert exc.value.attempts == 3
        assert len(mock_llm.requests) == 3

    def test_recovery_after_transient_500(self, mock_llm, monkeypatch):
        monkeypatch.setenv(KEY_ENV, "sk-test")
        mock_llm.push(500, _three_pose_reply())
        resp = plan_motion(PlannerRequest("jump", 3, 20), self._cfg(mock_llm))
        assert len(resp.scripts) == 3
        assert len(mock_llm.requests) == 2

    def test_client_error_fails_fast(self, mock_llm, monkeypatch):
        monkeypatch.setenv(KEY_ENV, "sk-test")
        mock_llm.push(403)
        with pytest.raises(PlannerError, match="403"):
            plan_motion(PlannerRequest("jump", 3, 20), self._cfg(mock_llm))
        assert len(mock_llm.requests) == 1
