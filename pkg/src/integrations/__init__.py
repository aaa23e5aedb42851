"""File formats: netpbm images, .tns tensors, checkpoints and dataset manifests."""
