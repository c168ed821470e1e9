"""Moments of a Gaussian one-way delay clamped from below (wifi preset)."""
from scipy.stats import norm

MU, SD, FLOOR = 2.9, 1.65, 0.05

z = (FLOOR - MU) / SD
p_clamped = norm.cdf(z)
# E[max(X, floor)] and E[max(X, floor)^2] for X ~ N(MU, SD^2)
tail_mean = MU * (1 - norm.cdf(z)) + SD * norm.pdf(z)
mean = FLOOR * p_clamped + tail_mean
tail_m2 = (MU**2 + SD**2) * (1 - norm.cdf(z)) + SD * (MU + FLOOR) * norm.pdf(z)
m2 = FLOOR**2 * p_clamped + tail_m2
sd = (m2 - mean**2) ** 0.5
print(f"clamped_fraction={p_clamped:.4f} mean_ms={mean:.4f} sd_ms={sd:.4f}")
print(f"mean_shift={(mean - MU):.4f} ms ({(mean / MU - 1) * 100:.2f}%)  sd_change={(sd / SD - 1) * 100:.2f}%")
