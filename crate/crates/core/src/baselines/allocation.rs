use nalgebra::DVector;

use crate::exposure::ConstraintSet;

/// Proportional allocation of the stage budget by `scores`, clipped at the
/// caps with the excess recycled among the remaining users.
pub fn redistribute(scores: &DVector<f64>, constraints: &ConstraintSet, m: usize) -> DVector<f64> {
    let n = scores.len();
    let price = constraints.price(m);
    let cap = constraints.cap(m);
    let mut u = DVector::zeros(n);
    let mut open: Vec<bool> = (0..n).map(|i| scores[i] > 0.0 && cap[i] > 0.0).collect();
    // free users cost nothing
    for i in 0..n {
        if open[i] && price[i] == 0.0 {
            u[i] = cap[i];
            open[i] = false;
        }
    }
    let mut remaining = constraints.budget(m);
    for _ in 0..=n {
        if remaining <= 1e-9 {
            break;
        }
        let weight: f64 = (0..n).filter(|&i| open[i]).map(|i| price[i] * scores[i]).sum();
        if weight <= 0.0 {
            break;
        }
        let rate = remaining / weight;
        let mut capped_any = false;
        for i in 0..n {
            if open[i] && rate * scores[i] >= cap[i] - u[i] {
                capped_any = true;
            }
        }
        if !capped_any {
            for i in 0..n {
                if open[i] {
                    u[i] += rate * scores[i];
                }
            }
            break;
        }
        // saturate every user whose proportional share reaches its cap, then recycle
        for i in 0..n {
            if open[i] && rate * scores[i] >= cap[i] - u[i] {
                remaining -= price[i] * (cap[i] - u[i]);
                u[i] = cap[i];
                open[i] = false;
            }
        }
    }
    u
}

/// Raises the lowest `levels + u` together until the budget or every cap is
/// exhausted; users at equal levels fill at equal rates.
pub fn water_fill(levels: &DVector<f64>, constraints: &ConstraintSet, m: usize) -> DVector<f64> {
    let n = levels.len();
    let price = constraints.price(m);
    let cap = constraints.cap(m);
    let budget = constraints.budget(m);
    let fill = |water: f64| DVector::from_fn(n, |i, _| (water - levels[i]).clamp(0.0, cap[i]));
    let spend = |u: &DVector<f64>| price.dot(u);
    let mut breaks: Vec<f64> = (0..n).flat_map(|i| [levels[i], levels[i] + cap[i]]).collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let top = *breaks.last().unwrap_or(&0.0);
    if spend(&fill(top)) <= budget {
        return fill(top);
    }
    let idx = breaks.partition_point(|&w| spend(&fill(w)) <= budget);
    let (lo, hi) = (breaks[idx - 1], breaks[idx]);
    let (s_lo, s_hi) = (spend(&fill(lo)), spend(&fill(hi)));
    let water = if s_hi > s_lo { lo + (budget - s_lo) / (s_hi - s_lo) * (hi - lo) } else { lo };
    let mut u = fill(water);
    let over = spend(&u) - budget;
    if over > 0.0 {
        u *= budget / (budget + over);
    }
    u
}

/// One quantum `budget / (100 n)` at a time to the user with the largest
/// remaining gap `gap_i - u_i`, skipping capped users.
pub fn greedy_quanta(gaps: &DVector<f64>, constraints: &ConstraintSet, m: usize) -> DVector<f64> {
    let n = gaps.len();
    let price = constraints.price(m);
    let cap = constraints.cap(m);
    let budget = constraints.budget(m);
    let mut u = DVector::zeros(n);
    for i in 0..n {
        if price[i] == 0.0 {
            u[i] = cap[i];
        }
    }
    let quantum = budget / (100 * n) as f64;
    let mut remaining = budget;
    while remaining > 1e-12 * budget.max(1.0) {
        let pick = (0..n)
            .filter(|&i| price[i] > 0.0 && u[i] < cap[i])
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if gaps[b] - u[b] >= gaps[i] - u[i] => Some(b),
                _ => Some(i),
            });
        let Some(i) = pick else { break };
        let spend = quantum.min(remaining).min(price[i] * (cap[i] - u[i]));
        u[i] = (u[i] + spend / price[i]).min(cap[i]);
        remaining -= spend;
    }
    u
}
