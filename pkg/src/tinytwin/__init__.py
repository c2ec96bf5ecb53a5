"""CPU-native digital-twin RF plane: channel traces, streaming convolution, a
gNB/UE fronthaul over TCP, link telemetry and a slot-timing benchmark."""
from .chan_model import CirTrace, DelayGrid, PdpProfile, SparseTaps, load_trace, tap_power_db, write_trace
from .conv import ConvState, IqFrame, convolve, convolve_full, convolve_sparse, select_top_n

__version__ = "0.1.0"

__all__ = [
    "CirTrace", "DelayGrid", "PdpProfile", "SparseTaps", "load_trace", "tap_power_db", "write_trace",
    "ConvState", "IqFrame", "convolve", "convolve_full", "convolve_sparse", "select_top_n",
]
