"""One-process development stack.

Starts a registry, a tracer, local agents, and the evaluation server — all
in this process on loopback ports — then seeds the registry with two demo
models so evaluations work immediately:

* ``synthetic-demo`` — virtual-clock latency model (2 ms base + 0.5 ms per
  item), ideal for deterministic throughput experiments.
* ``linear-demo`` — a real affine model served from an on-disk weights
  file, running on the wall clock.

Everything lives under one data directory (a temporary one by default):
the evaluation store, analysis reports, the asset cache, and the demo
weights file.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from .agent import AgentRuntime, AgentService, start_agent_server
from .assets import AssetCache
from .errors import RegistryUnreachable
from .evaldb import EvalDB
from .predictor import LinearPredictor, SimulatedPredictor, register_predictor
from .registry import Device, start_registry_server
from .sampledata import DEMO_MODEL_YAML, write_linear_demo
from .server import ApiServer, Orchestrator, start_api_server
from .tracer import TracerClient, start_tracer_server

__all__ = ["DevStack"]


class DevStack:
    """Registry + tracer + agents + evaluation server, wired together.

    ``start()`` brings everything up and returns self; ``stop()`` tears it
    down in reverse order.  Usable as a context manager.
    """

    def __init__(self, *, agents: int = 1, host: str = "127.0.0.1",
                 port: int = 0, data_dir: str | Path | None = None,
                 ui_root: str | Path | None = None):
        if agents < 1:
            raise ValueError("a dev stack needs at least one agent")
        self.agent_count = agents
        self.host = host
        self.port = port
        self.data_dir = Path(data_dir) if data_dir is not None else None
        self.ui_root = Path(ui_root) if ui_root is not None else None

        self.registry = None
        self.registry_endpoint = ""
        self.tracer_endpoint = ""
        self.evaldb: EvalDB | None = None
        self.orchestrator: Orchestrator | None = None
        self.api: ApiServer | None = None
        self.agent_ids: list[str] = []
        self.model_keys: list[tuple[str, str]] = []
        self._cleanups: list = []

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "DevStack":
        if self.data_dir is None:
            self.data_dir = Path(tempfile.mkdtemp(prefix="benchrig-dev-"))
        self.data_dir.mkdir(parents=True, exist_ok=True)

        register_predictor(SimulatedPredictor(), replace=True)
        register_predictor(LinearPredictor(), replace=True)

        registry_server, self.registry = start_registry_server()
        self._cleanups.append(registry_server.stop)
        self.registry_endpoint = registry_server.endpoint

        tracer_server, _store = start_tracer_server()
        self._cleanups.append(tracer_server.stop)
        self.tracer_endpoint = tracer_server.endpoint

        linear_manifest = write_linear_demo(self.data_dir / "models")
        manifests = [DEMO_MODEL_YAML, linear_manifest]
        for manifest in manifests:
            self.model_keys.append(self.registry.publish_model(manifest))

        assets = AssetCache(self.data_dir / "assets")
        for index in range(self.agent_count):
            self._start_agent(f"dev-agent-{index}", manifests, assets)

        self.evaldb = EvalDB(self.data_dir / "evaldb")
        self.orchestrator = Orchestrator(self.registry_endpoint,
                                         self.tracer_endpoint, self.evaldb)
        self.api = start_api_server(self.orchestrator, host=self.host,
                                    port=self.port, ui_root=self.ui_root)
        self._cleanups.append(self.api.stop)
        return self

    def _start_agent(self, agent_id: str, manifests: list[str],
                     assets: AssetCache) -> None:
        tracer_client = TracerClient(self.tracer_endpoint)
        self._cleanups.append(tracer_client.close)
        service = AgentService(
            agent_id=agent_id,
            devices=(
                Device(kind="gpu", name="sim-gpu", memory_bytes=16 << 30, count=1),
                Device(kind="cpu", name="host-cpu", memory_bytes=64 << 30, count=2),
            ),
            frameworks=("linear", "synthetic"),
            builtin_manifests=manifests,
            assets=assets,
            tracer_client=tracer_client,
        )
        agent_server = start_agent_server(service)
        self._cleanups.append(agent_server.stop)
        runtime = AgentRuntime(service, self.registry_endpoint, ttl_seconds=10.0)
        runtime.start()
        self._cleanups.append(runtime.stop)
        if not runtime.wait_registered(timeout=15.0):
            self.stop()
            raise RegistryUnreachable(
                f"agent {agent_id} did not register within 15s")
        self.agent_ids.append(agent_id)

    def stop(self) -> None:
        cleanups, self._cleanups = self._cleanups, []
        for cleanup in reversed(cleanups):
            try:
                cleanup()
            except Exception:
                pass  # teardown is best-effort; later cleanups still run

    def __enter__(self) -> "DevStack":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()

    # -- convenience ---------------------------------------------------------

    @property
    def url(self) -> str:
        if self.api is None:
            raise RuntimeError("dev stack is not started")
        return self.api.url

    @property
    def endpoint(self) -> str:
        if self.api is None:
            raise RuntimeError("dev stack is not started")
        return self.api.endpoint
