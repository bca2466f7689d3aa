"""Pure-Python sweeps; the reference twin of the compiled ``_sweep`` module."""
import math

BACKEND = "python"


def run_sweeps(spins, indptr, nbr, weight, field, order, beta, uniforms, method,
               random_site, record_sites, record_out, mag_out, energy_out, mag, energy):
    s = spins.tolist()
    ptr = indptr.tolist()
    nb = nbr.tolist()
    w = weight.tolist()
    fld = field.tolist()
    odr = order.tolist()
    rec = record_sites.tolist()
    m = len(odr)
    exp = math.exp
    for t, row in enumerate(uniforms.tolist()):
        for u in range(m):
            if random_site:
                pick = int(row[2 * u] * m)
                if pick >= m:
                    pick = m - 1
                i = odr[pick]
                r = row[2 * u + 1]
            else:
                i = odr[u]
                r = row[u]
            f = fld[i]
            for k in range(ptr[i], ptr[i + 1]):
                f = f + w[k] * s[nb[k]]
            s_old = s[i]
            if method == 0:
                p = 1.0 / (1.0 + exp(-2.0 * beta * f))
                s_new = 1 if r < p else -1
            else:
                de = 2.0 * s_old * f
                s_new = -s_old if (de <= 0.0 or r < exp(-beta * de)) else s_old
            if s_new != s_old:
                s[i] = s_new
                mag = mag + 2.0 * s_new
                energy = energy + 2.0 * s_old * f
        for k, site in enumerate(rec):
            record_out[t, k] = s[site]
        mag_out[t] = mag
        energy_out[t] = energy
    spins[:] = s
    return mag, energy
