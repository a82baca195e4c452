"""
Templated shuffle layer: core types, topology and cost model, templates,
plan execution, sampling, the algorithm library and the simulator.
"""

# algorithms registers the schedule parameters the shipped templates use
from app.shuffle import algorithms  # noqa: F401
from app.shuffle.core import CombinerFn, Message, MessageBuffer, PartitionFn
from app.shuffle.errors import TeShuError
from app.shuffle.plan import PlanOptions, ShuffleCall, instantiate
from app.shuffle.sampling import SamplingConfig
from app.shuffle.templates import Template, parse_template
from app.shuffle.topology import CostModel, Level, Topology
