from .metrics import MetricReport, evaluate_sequence, psnr, ssim
from .visualize import attention_heatmap
from .compute import ComputeProfile, count_macs

__all__ = ["MetricReport", "evaluate_sequence", "psnr", "ssim", "ComputeProfile", "count_macs", "attention_heatmap"]
