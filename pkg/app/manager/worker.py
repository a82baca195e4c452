"""
Worker-side shuffle entry point with a local template cache.

The first call for a template id fetches it from the manager (which records
START); later calls reuse the cached template and notify the manager of the
start without waiting. END is always recorded synchronously.

When the manager cannot be reached the shuffle still runs: the template
comes from the worker's local library and the missing records are logged.
"""

import logging
from typing import Dict, Mapping, Optional

from app.manager.client import ManagerClient
from app.shuffle.plan import PlanOptions, ShuffleCall, ShufflePlan, instantiate
from app.shuffle.sampling import SamplingConfig
from app.shuffle.templates import Template
from app.shuffle.topology import CostModel, Topology

logger = logging.getLogger('shuffle_worker')


class ShuffleWorker:
    def __init__(self, w_id: int, client: ManagerClient, topo: Topology, cm: CostModel,
                 local_templates: Optional[Mapping[str, Template]] = None):
        self.w_id = w_id
        self.client = client
        self.topo = topo
        self.cm = cm
        self.local_templates = dict(local_templates or {})
        self._cache: Dict[str, Template] = {}

    def cached_templates(self):
        return sorted(self._cache)

    def template_for(self, call: ShuffleCall) -> Template:
        template = self._cache.get(call.template_id)
        if template is not None:
            self.client.record_start_cached(self.w_id, call.shuffle_id, call.template_id)
            return template
        try:
            template = self.client.get_template(self.w_id, call.shuffle_id, call.template_id)
        except OSError as e:
            template = self.local_templates.get(call.template_id)
            if template is None:
                raise
            # Not cached, so the next call asks the manager again.
            logger.warning(f"worker {self.w_id}: manager unreachable ({e}); "
                           f"running local template {call.template_id} unrecorded")
            return template
        self._cache[call.template_id] = template
        logger.debug(f"worker {self.w_id}: fetched template {call.template_id}")
        return template

    def prepare(self, call: ShuffleCall, cfg: SamplingConfig,
                options: Optional[PlanOptions] = None) -> ShufflePlan:
        """Resolves the template (recording START) and instantiates this worker's plan."""
        if call.w_id != self.w_id:
            raise ValueError(f"call for worker {call.w_id} given to worker {self.w_id}")
        return instantiate(self.template_for(call), call, self.topo, self.cm, cfg, options)

    def finish(self, call: ShuffleCall) -> None:
        try:
            self.client.record_end(self.w_id, call.shuffle_id)
        except OSError as e:
            logger.warning(f"worker {self.w_id}: END of shuffle {call.shuffle_id} not recorded: {e}")
