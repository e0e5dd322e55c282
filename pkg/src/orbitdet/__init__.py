"""Software model of an FPGA-accelerator deployment pipeline for YOLO-style
object detection: graph compatibility passes, INT8 post-training
quantization, pre/post-processing, a pipelined benchmark harness and mAP
evaluation."""
from . import _backend

__version__ = "0.1.0"
KERNEL_BACKEND = _backend.NAME
