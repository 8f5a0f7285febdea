use super::dump::ActivationDump;
use crate::error::{Error, Result};

/// Units below this activation in every state count as silent.
pub const SILENT_THRESHOLD: f64 = 1e-6;

/// Mean activation of one unit per state together with state occupancy.
#[derive(Clone, Debug, PartialEq)]
pub struct RateMap {
    pub rates: Vec<f64>,
    pub occupancy: Vec<f64>,
}

/// Rate map of `unit` in `condition`; every state must have been visited.
pub fn rate_map(dump: &ActivationDump, unit: usize, condition: usize) -> Result<RateMap> {
    if unit >= dump.n_units || condition >= dump.n_conditions() {
        return Err(Error::Contract(format!(
            "unit {unit} / condition {condition} not in dump"
        )));
    }
    let unvisited: Vec<usize> = (0..dump.n_states)
        .filter(|s| dump.occupancy[*s] <= 0.0)
        .collect();
    if !unvisited.is_empty() {
        return Err(Error::Coverage(unvisited));
    }
    Ok(RateMap {
        rates: dump.unit_profile(unit, condition),
        occupancy: dump.occupancy.clone(),
    })
}

/// Skaggs information `sum_i p_i (l_i / l) log2(l_i / l)` with `l = sum_i p_i l_i`.
pub fn spatial_information(map: &RateMap) -> Result<f64> {
    if map.rates.iter().any(|r| *r < 0.0) {
        return Err(Error::Contract(
            "spatial information needs nonnegative rates".into(),
        ));
    }
    let total: f64 = map.occupancy.iter().sum();
    let mean_rate: f64 = map
        .rates
        .iter()
        .zip(&map.occupancy)
        .map(|(r, p)| r * p)
        .sum::<f64>()
        / total;
    if mean_rate <= 0.0 {
        return Ok(0.0);
    }
    let si = map
        .rates
        .iter()
        .zip(&map.occupancy)
        .filter(|(r, _)| **r > 0.0)
        .map(|(r, p)| {
            let ratio = r / mean_rate;
            p / total * ratio * ratio.log2()
        })
        .sum::<f64>();
    Ok(si.max(0.0))
}

/// Fraction of units whose activation stays below `threshold` in every state and condition.
pub fn silent_fraction(dump: &ActivationDump, threshold: f64) -> f64 {
    if dump.n_units == 0 {
        return 0.0;
    }
    let silent = (0..dump.n_units)
        .filter(|&u| {
            (0..dump.n_states)
                .all(|s| (0..dump.n_conditions()).all(|c| dump.get(u, s, c) < threshold))
        })
        .count();
    silent as f64 / dump.n_units as f64
}

#[cfg(test)]
mod tests {
    use super::super::dump::Layer;
    use super::*;
    use proptest::prelude::*;

    fn map(rates: Vec<f64>, occ: Vec<f64>) -> RateMap {
        RateMap {
            rates,
            occupancy: occ,
        }
    }

    #[test]
    fn skaggs_examples() {
        assert_eq!(
            spatial_information(&map(vec![3.0; 4], vec![0.25; 4])).unwrap(),
            0.0
        );
        let two = spatial_information(&map(vec![2.0, 0.0], vec![0.5, 0.5])).unwrap();
        assert!((two - 0.5 * 2.0 * 2f64.log2()).abs() < 1e-12);
        for n in [2usize, 7, 16] {
            let mut rates = vec![0.0; n];
            rates[n / 2] = 4.0;
            let si = spatial_information(&map(rates, vec![1.0 / n as f64; n])).unwrap();
            assert!((si - (n as f64).log2()).abs() < 1e-12);
        }
        assert_eq!(
            spatial_information(&map(vec![0.0; 3], vec![1.0 / 3.0; 3])).unwrap(),
            0.0
        );
        assert!(spatial_information(&map(vec![-1.0, 1.0], vec![0.5; 2])).is_err());
    }

    proptest! {
        #[test]
        fn si_is_scale_invariant(rates in prop::collection::vec(0.0f64..5.0, 2..20)) {
            let n = rates.len();
            let base = spatial_information(&map(rates.clone(), vec![1.0 / n as f64; n])).unwrap();
            prop_assert!(base >= 0.0);
            for c in [0.5, 2.0, 10.0] {
                let scaled = spatial_information(&map(rates.iter().map(|r| r * c).collect(), vec![1.0 / n as f64; n])).unwrap();
                prop_assert!((scaled - base).abs() < 1e-9);
            }
        }
    }

    fn dump(values: Vec<f64>, units: usize, states: usize, occ: Vec<f64>) -> ActivationDump {
        let coords = (0..states).map(|s| (s, 0)).collect();
        ActivationDump::new(
            Layer::Latent,
            units,
            vec!["all".into()],
            coords,
            values,
            occ,
        )
        .unwrap()
    }

    #[test]
    fn rate_map_rules() {
        let d = dump(
            vec![2.0, 2.0, 2.0, 0.0, 1.0, 0.0],
            2,
            3,
            vec![1.0, 1.0, 1.0],
        );
        let m = rate_map(&d, 0, 0).unwrap();
        assert_eq!(m.rates, vec![2.0; 3]);
        assert_eq!(rate_map(&d, 1, 0).unwrap().rates, vec![0.0, 1.0, 0.0]);
        assert_eq!(rate_map(&d, 1, 0).unwrap(), rate_map(&d, 1, 0).unwrap());
        let d = dump(vec![1.0, 1.0, 1.0], 1, 3, vec![1.0, 0.0, 1.0]);
        assert!(matches!(rate_map(&d, 0, 0), Err(Error::Coverage(v)) if v == vec![1]));
    }

    #[test]
    fn silent_units() {
        let d = dump(vec![0.0; 6], 2, 3, vec![1.0; 3]);
        assert_eq!(silent_fraction(&d, SILENT_THRESHOLD), 1.0);
        let d = dump(vec![0.5, 0.1, 0.2, 0.0, 0.0, 1e-7], 2, 3, vec![1.0; 3]);
        assert_eq!(silent_fraction(&d, SILENT_THRESHOLD), 0.5);
    }
}
