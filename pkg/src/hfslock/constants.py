"""Physical constants (SI, CODATA 2018) used across the package."""

C = 299_792_458.0                 # speed of light, m/s
H = 6.626_070_15e-34              # Planck constant, J s
K_B = 1.380_649e-23               # Boltzmann constant, J/K
AMU = 1.660_539_066_60e-27        # unified atomic mass unit, kg

# second radiation constant h c / k_B in cm K, for Boltzmann factors of
# level energies given in cm^-1
HC_OVER_K_CM = H * C * 100.0 / K_B

C_NM_PER_S = C * 1e9
FWHM_PER_SIGMA = 2.0 * (2.0 * 0.6931471805599453) ** 0.5   # 2 sqrt(2 ln 2)
