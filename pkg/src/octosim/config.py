"""Default hardware geometry and clock constants (FPGA prototype values)."""

EXTRACTOR_HZ = 125e6
COMPUTE_HZ = 222e6

FLOW_TABLE_DEPTH = 8192
META_BYTES = 13
WORD_BYTES = 16

FEATURE_MEM_DEPTH = 8192
COMPUTE_MEM_DEPTH = 16384
COMPUTE_BANKS = 2

SIMD_LANES = 8
SUBLANE_WIDTH = 4
VU_WIDTH = 8
ARRAY_K = 16

DRF_SIZE = 32
ADRF_SIZE = 16
ICACHE_WORDS = 4096

PAYLOAD_BYTES = 16

# cycle model
SIMDU_LATENCY = 5  # mult + log2(8) adder tree + activation
VU_LATENCY = 1
LD_LATENCY = 2
FA_LATENCY = 1
EXTRACTOR_STAGES = 4
# block aggregation / pooling stream rate on VU, int32 elements per cycle
VU_STREAM_ELEMS = 16
