"""Burst denoising and noisy-input novel view synthesis via feed-forward
per-pixel Gaussian splatting.

Pipeline overview:
    cameras   - per-pixel rays, Plucker / reference-point encodings, unprojection
    noise     - shot/read noise synthesis, gain curve, linearize/delinearize
    scenes    - procedural multi-view scenes, directory IO, burst assembly
    gaussians - the Gaussian point cloud container
    model     - transformer that maps a burst to a per-pixel Gaussian cloud
    renderer  - differentiable splatting rasterizer (color, depth, alpha)
    losses    - MSE, perceptual slot, depth self-consistency, log-weighted frequency
    training  - dual-branch training loop with warm-up scheduling
    evaluation- PSNR/SSIM/depth metrics, gain sweeps, throughput, spectra
    cli       - operator surface
"""

__version__ = "0.1.0"
