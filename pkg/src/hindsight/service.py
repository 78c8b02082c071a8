"""HTTP facade over a run directory: episode playback, counterfactual
explanations, world-editing sessions with policy rollouts, and report
downloads. Run directories are opened read-only; session edits live in
memory and images are served content-addressed."""
from __future__ import annotations

import hashlib
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .env import (
    Action,
    N_ACTIONS,
    ScenarioRegistry,
    Tile,
    WorldGrid,
    render,
    render_observation,
    reset,
)
from .env.render import gif_bytes, png_bytes
from .models import generate_prior_state, load_model
from .replay import EpisodeData, load_episode, replay_episode_worlds
from .training import play_policy_episode


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail: str = ""):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail


@dataclass
class Session:
    id: str
    scenario_id: str
    world: WorldGrid
    created: float
    last_access: float
    rollouts: list[str] = field(default_factory=list)


class TileEdit(BaseModel):
    x: int
    y: int
    tile: int


class EditRequest(BaseModel):
    edits: list[TileEdit] = []
    agent_pos: tuple[int, int] | None = None
    agent_facing: int | None = None


class SessionRequest(BaseModel):
    scenario: str | None = None
    episode: str | None = None


class RolloutRequest(BaseModel):
    max_steps: int | None = None


class ExplainRequest(BaseModel):
    episode: str
    t: int
    action: int | str
    mode: str = "treatment"


class ServiceState:
    def __init__(
        self,
        run_dir: Path | str,
        checkpoint_dir: Path | str | None = None,
        session_ttl: float = 1800.0,
        registry: ScenarioRegistry | None = None,
    ):
        self.run_dir = Path(run_dir)
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else self.run_dir / "checkpoints"
        self.session_ttl = session_ttl
        self.registry = registry or ScenarioRegistry()
        self.blobs: dict[str, bytes] = {}
        self.sessions: dict[str, Session] = {}
        self.session_episodes: dict[str, EpisodeData] = {}
        self.session_frames: dict[str, list[str]] = {}  # episode id -> frame blob hashes
        self._models = None

    # --- model snapshot -----------------------------------------------------
    def models(self):
        if self._models is None:
            fwm_path = self.checkpoint_dir / "fwm.ckpt"
            rwm_path = self.checkpoint_dir / "rwm.ckpt"
            policy_path = self.checkpoint_dir / "policy.ckpt"
            if not fwm_path.exists() or not rwm_path.exists():
                raise ApiError(409, "missing_checkpoint", "no trained checkpoints in run directory",
                               str(self.checkpoint_dir))
            policy = load_model(policy_path, "policy") if policy_path.exists() else None
            self._models = (load_model(fwm_path, "forward"), load_model(rwm_path, "reverse"), policy)
        return self._models

    # --- blobs ----------------------------------------------------------------
    def put_blob(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()[:32]
        self.blobs[digest] = data
        return f"/api/blobs/{digest}"

    # --- episodes ---------------------------------------------------------------
    def episode_ids(self) -> list[str]:
        stored = sorted(p.stem for p in (self.run_dir / "episodes").glob("*.jsonl")) if (
            self.run_dir / "episodes"
        ).is_dir() else []
        return stored + sorted(self.session_episodes)

    def episode(self, episode_id: str) -> EpisodeData:
        if episode_id in self.session_episodes:
            return self.session_episodes[episode_id]
        path = self.run_dir / "episodes" / f"{episode_id}.jsonl"
        if not path.exists():
            raise ApiError(404, "not_found", f"unknown episode {episode_id!r}")
        return load_episode(path)

    def episode_frames(self, episode_id: str) -> list[str]:
        """Content-addressed full-grid frame renders for an episode."""
        if episode_id in self.session_frames:
            return self.session_frames[episode_id]
        episode = self.episode(episode_id)
        worlds = replay_episode_worlds(episode, self.registry)
        hashes = [self.put_blob(png_bytes(render(w, "full-grid"))) for w in worlds]
        self.session_frames[episode_id] = hashes
        return hashes

    # --- sessions -----------------------------------------------------------------
    def session(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise ApiError(404, "not_found", f"unknown session {session_id!r}")
        if time.time() - session.last_access > self.session_ttl:
            del self.sessions[session_id]
            raise ApiError(410, "session_expired", f"session {session_id!r} expired; create a new one")
        session.last_access = time.time()
        return session


def world_payload(state: ServiceState, world: WorldGrid) -> dict:
    return {
        "width": world.width,
        "height": world.height,
        "tiles": world.tiles.tolist(),
        "agent_pos": list(world.agent_pos),
        "agent_facing": int(world.agent_facing),
        "inventory": world.inventory.tolist(),
        "render": state.put_blob(png_bytes(render(world, "full-grid"))),
    }


def parse_action(value: int | str) -> int:
    if isinstance(value, str):
        try:
            return int(Action[value.upper().replace("-", "_")])
        except KeyError as exc:
            raise ApiError(422, "validation", f"unknown action {value!r}") from exc
    if not 0 <= int(value) < N_ACTIONS:
        raise ApiError(422, "validation", f"action index {value} out of range")
    return int(value)


def create_app(
    run_dir: Path | str,
    checkpoint_dir: Path | str | None = None,
    session_ttl: float = 1800.0,
    static_dir: Path | str | None = None,
    registry: ScenarioRegistry | None = None,
) -> FastAPI:
    state = ServiceState(run_dir, checkpoint_dir, session_ttl, registry)
    app = FastAPI(title="hindsight what-if service")
    app.state.service = state

    @app.exception_handler(ApiError)
    async def api_error_handler(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    @app.get("/api/episodes")
    def list_episodes():
        out = []
        for eid in state.episode_ids():
            ep = state.episode(eid)
            out.append(
                {
                    "id": eid,
                    "scenario_id": ep.scenario_id,
                    "steps": len(ep) - 1,
                    "total_reward": ep.total_reward(),
                    "completed": bool(not ep.truncated),
                }
            )
        return {"episodes": out}

    @app.get("/api/episodes/{episode_id}")
    def episode_detail(episode_id: str):
        ep = state.episode(episode_id)
        frames = state.episode_frames(episode_id)
        from PIL import Image
        import io

        images = [Image.open(io.BytesIO(state.blobs[url.rsplit("/", 1)[-1]])) for url in frames]
        return {
            "id": episode_id,
            "scenario_id": ep.scenario_id,
            "seed": ep.seed,
            "steps": len(ep) - 1,
            "total_reward": ep.total_reward(),
            "completed": bool(not ep.truncated),
            "actions": [int(a) for a in ep.actions[:-1]],
            "rewards": [float(r) for r in ep.rewards],
            "video": state.put_blob(gif_bytes(images)),
        }

    @app.get("/api/episodes/{episode_id}/frames/{t}")
    def frame(episode_id: str, t: int):
        ep = state.episode(episode_id)
        if not 0 <= t < len(ep):
            raise ApiError(404, "not_found", f"frame {t} out of range 0..{len(ep) - 1}")
        frames = state.episode_frames(episode_id)
        obs = ep.observation(t)
        return {
            "t": t,
            "render": frames[t],
            "window_render": state.put_blob(png_bytes(render_observation(obs))),
            "action": int(ep.actions[t]) if t < len(ep) - 1 else None,
            "reward": float(ep.rewards[t]),
            "cont": bool(ep.conts[t]),
            "inventory": obs.inventory.tolist(),
            "facing": obs.facing,
        }

    @app.post("/api/explain")
    def explain(req: ExplainRequest):
        action = parse_action(req.action)
        ep = state.episode(req.episode)
        if not 0 <= req.t < len(ep) - 1:
            raise ApiError(422, "validation", f"t={req.t} outside the episode's action steps")
        fwm, rwm, _ = state.models()
        result = generate_prior_state(fwm, rwm, ep, req.t, action)
        return {
            "t": req.t,
            "action": action,
            "same_as_actual": result.same_as_actual,
            "actual_render": state.put_blob(png_bytes(render_observation(result.actual_obs))),
            "expected_render": state.put_blob(png_bytes(result.expected_image)),
            "successor_render": state.put_blob(png_bytes(render_observation(result.successor_obs))),
            "diff_mask": result.diff_mask.astype(int).tolist(),
        }

    @app.post("/api/sessions")
    def create_session(req: SessionRequest):
        if (req.scenario is None) == (req.episode is None):
            raise ApiError(422, "validation", "provide exactly one of scenario or episode")
        if req.episode is not None:
            ep = state.episode(req.episode)
            scenario_id = ep.scenario_id
        else:
            scenario_id = req.scenario
        try:
            scenario = state.registry.scenario(scenario_id)
        except Exception as exc:
            raise ApiError(404, "not_found", f"unknown scenario {scenario_id!r}") from exc
        world, _ = reset(scenario, 0, state.registry)
        session = Session(
            id=uuid.uuid4().hex[:12],
            scenario_id=scenario_id,
            world=world,
            created=time.time(),
            last_access=time.time(),
        )
        state.sessions[session.id] = session
        return {"session": session.id, "world": world_payload(state, world)}

    @app.post("/api/sessions/{session_id}/edit")
    def edit_world(session_id: str, req: EditRequest):
        session = state.session(session_id)
        world = session.world.copy()
        for edit in req.edits:
            if not world.in_bounds(edit.x, edit.y):
                raise ApiError(422, "validation", f"edit at ({edit.x},{edit.y}) is out of bounds")
            if not 0 <= edit.tile < len(Tile):
                raise ApiError(422, "validation", f"unknown tile id {edit.tile}")
            if (edit.x, edit.y) == world.agent_pos and edit.tile != int(Tile.FLOOR):
                raise ApiError(422, "validation", "cannot place a blocking tile on the agent")
            world.tiles[edit.y, edit.x] = edit.tile
        if req.agent_pos is not None:
            x, y = req.agent_pos
            if not world.is_walkable(x, y):
                raise ApiError(422, "validation", f"agent cannot stand at ({x},{y})")
            world.agent_pos = (x, y)
        if req.agent_facing is not None:
            if not 0 <= req.agent_facing < 4:
                raise ApiError(422, "validation", f"unknown facing {req.agent_facing}")
            world.agent_facing = type(world.agent_facing)(req.agent_facing)
        session.world = world
        return {"session": session.id, "world": world_payload(state, world)}

    @app.post("/api/sessions/{session_id}/rollout")
    def rollout(session_id: str, req: RolloutRequest):
        session = state.session(session_id)
        fwm, _, policy = state.models()
        if policy is None:
            raise ApiError(409, "missing_checkpoint", "no policy checkpoint for rollouts")
        world = session.world.copy()
        if req.max_steps:
            world.max_steps = int(req.max_steps)
        world.steps_taken = 0
        episode_id = f"session-{session.id}-{len(session.rollouts):03d}"
        episode = play_policy_episode(
            fwm, policy, world, world.observe(), f"session:{session.id}", seed=0, mode="greedy"
        )
        # Frames must be rendered now: the edited world is not a registered
        # scenario, so the episode cannot be re-simulated later.
        from .env import step as env_step

        sim = world.copy()
        images = [render(sim, "full-grid")]
        for a in episode.actions[:-1]:
            sim, _, _, _ = env_step(sim, int(a))
            images.append(render(sim, "full-grid"))
        state.session_episodes[episode_id] = episode
        state.session_frames[episode_id] = [state.put_blob(png_bytes(img)) for img in images]
        session.rollouts.append(episode_id)
        return {
            "episode": episode_id,
            "steps": len(episode) - 1,
            "total_reward": episode.total_reward(),
            "completed": bool(not episode.truncated),
            "video": state.put_blob(gif_bytes(images)),
        }

    @app.get("/api/reports/{report_id}")
    def report(report_id: str):
        report_dir = state.run_dir / "reports" / report_id
        manifest = report_dir / "manifest.json"
        if not manifest.exists():
            raise ApiError(404, "not_found", f"unknown report {report_id!r}")
        import json as _json

        data = _json.loads(manifest.read_text())
        data["video"] = state.put_blob((report_dir / data["video"]).read_bytes())
        for snap in data["snapshots"]:
            snap["actual_render"] = state.put_blob((report_dir / snap["actual_render"]).read_bytes())
            if snap["expected_render"]:
                snap["expected_render"] = state.put_blob((report_dir / snap["expected_render"]).read_bytes())
        return data

    @app.get("/api/reports")
    def list_reports():
        reports_dir = state.run_dir / "reports"
        ids = sorted(p.name for p in reports_dir.iterdir() if (p / "manifest.json").exists()) if reports_dir.is_dir() else []
        return {"reports": ids}

    @app.get("/api/scenarios")
    def list_scenarios():
        return {"scenarios": state.registry.scenario_ids(), "worlds": state.registry.world_names()}

    @app.get("/api/blobs/{digest}")
    def blob(digest: str):
        data = state.blobs.get(digest)
        if data is None:
            raise ApiError(404, "not_found", f"unknown blob {digest!r}")
        media = "image/gif" if data[:3] == b"GIF" else "image/png"
        return Response(content=data, media_type=media)

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="static")
    return app
