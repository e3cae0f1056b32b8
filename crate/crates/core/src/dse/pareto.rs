use std::cmp::Ordering;

use super::EvalRecord;

/// `a` dominates `b`: no worse in both objectives, strictly better in one.
/// Points are `(accuracy_loss, energy)`, both minimized.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

/// Indices of the non-dominated points, sorted by energy. Among points with
/// identical objectives only the one with the smallest id survives.
pub fn pareto_indices(points: &[(f64, f64)], ids: &[&str]) -> Vec<usize> {
    assert_eq!(points.len(), ids.len());
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (points[a], points[b]);
        pa.1.total_cmp(&pb.1)
            .then(pa.0.total_cmp(&pb.0))
            .then_with(|| ids[a].cmp(ids[b]))
    });
    let mut best_loss = f64::INFINITY;
    let mut front = Vec::new();
    for i in order {
        if points[i].0 < best_loss {
            best_loss = points[i].0;
            front.push(i);
        }
    }
    front
}

/// Non-dominated records sorted by energy ascending (accuracy loss descending).
pub fn pareto_filter(records: &[EvalRecord]) -> Vec<EvalRecord> {
    let points: Vec<(f64, f64)> = records.iter().map(EvalRecord::objectives).collect();
    let ids: Vec<&str> = records.iter().map(|r| r.plan_id.as_str()).collect();
    pareto_indices(&points, &ids)
        .into_iter()
        .map(|i| records[i].clone())
        .collect()
}

/// O(n^2) check that `front` is exactly the non-dominated subset of `all`
/// (up to duplicates of identical objectives).
pub fn verify_front(all: &[(f64, f64)], front: &[(f64, f64)]) -> Result<(), String> {
    for &f in front {
        if let Some(d) = all.iter().find(|&&p| dominates(p, f)) {
            return Err(format!("front point {f:?} is dominated by {d:?}"));
        }
    }
    for &p in all {
        let dominated = all.iter().any(|&q| dominates(q, p));
        let represented = front.iter().any(|&f| f.0 == p.0 && f.1 == p.1);
        if !dominated && !represented {
            return Err(format!("non-dominated point {p:?} missing from the front"));
        }
    }
    for pair in front.windows(2) {
        if pair[0].1.total_cmp(&pair[1].1) != Ordering::Less || pair[0].0 <= pair[1].0 {
            return Err(format!("front not strictly ordered at {:?} -> {:?}", pair[0], pair[1]));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn front(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let ids: Vec<String> = (0..points.len()).map(|i| format!("p{i:04}")).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        pareto_indices(points, &ids).into_iter().map(|i| points[i]).collect()
    }

    #[test]
    fn small_examples() {
        assert_eq!(front(&[(1.0, 1.0), (0.5, 2.0), (1.2, 1.5)]), vec![(1.0, 1.0), (0.5, 2.0)]);
        assert_eq!(front(&[(0.3, 0.3)]), vec![(0.3, 0.3)]);
        assert!(front(&[]).is_empty());
        let points = [(0.1, 0.5), (0.1, 0.5), (0.2, 0.4)];
        let ids = ["b", "a", "c"];
        assert_eq!(pareto_indices(&points, &ids), vec![2, 1]);
    }

    proptest! {
        #[test]
        fn front_is_non_dominated_and_maximal(raw in prop::collection::vec((0u8..6, 0u8..6), 0..60)) {
            let points: Vec<(f64, f64)> = raw.iter().map(|&(a, e)| (a as f64 / 5.0, e as f64 / 5.0)).collect();
            let f = front(&points);
            prop_assert!(verify_front(&points, &f).is_ok(), "{:?}", verify_front(&points, &f));
        }
    }
}
