# Molecular Communication Demodulation Toolkit
# Diffusion channel simulation, preprocessing and CNN demodulation

__version__ = "0.1.0"
