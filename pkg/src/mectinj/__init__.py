"""Injectivity analysis of the polychromatic multi-energy CT forward map.

Modules, bottom-up: ``atten_data`` (attenuation tables), ``spectra``
(energy grids, Kramers and file spectra), ``forward_model`` (I(x) and its
Jacobian), ``pmatrix`` (P-matrix tests and margins), ``rect_scan`` (grid
certificates and tube potential sweeps), ``linmap_search`` (det-1
transforms and injectivity constants), ``redundant`` (P-families for
n > m), ``inversion`` (numerical inverse and Lipschitz checks), ``cli``.
"""

__version__ = "0.1.0"
