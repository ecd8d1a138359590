use super::HarnessError;
use crate::MultiIndex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dimension {
    Categorical { labels: Vec<String> },
    IntegerRange { lo: i64, hi: i64, step: i64 },
    DiscretizedReal { lo: f64, hi: f64, points: usize },
}

/// A decoded coordinate value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Choice {
    Int(i64),
    Real(f64),
    Label(String),
}

impl Dimension {
    pub fn size(&self) -> usize {
        match self {
            Dimension::Categorical { labels } => labels.len(),
            Dimension::IntegerRange { lo, hi, step } => ((hi - lo) / step + 1) as usize,
            Dimension::DiscretizedReal { points, .. } => *points,
        }
    }

    pub fn decode(&self, i: usize) -> Option<Choice> {
        if i >= self.size() {
            return None;
        }
        Some(match self {
            Dimension::Categorical { labels } => Choice::Label(labels[i].clone()),
            Dimension::IntegerRange { lo, step, .. } => Choice::Int(lo + step * i as i64),
            Dimension::DiscretizedReal { lo, hi, points } => Choice::Real(real_point(*lo, *hi, *points, i)),
        })
    }

    pub fn encode(&self, c: &Choice) -> Option<usize> {
        match (self, c) {
            (Dimension::Categorical { labels }, Choice::Label(l)) => labels.iter().position(|x| x == l),
            (Dimension::IntegerRange { lo, step, .. }, Choice::Int(v)) => {
                let off = v - lo;
                (off >= 0 && off % step == 0 && ((off / step) as usize) < self.size()).then(|| (off / step) as usize)
            }
            (Dimension::DiscretizedReal { lo, hi, points }, Choice::Real(v)) => {
                (0..*points).find(|&i| real_point(*lo, *hi, *points, i) == *v)
            }
            // Integral reals arrive as ints after a JSON round trip.
            (Dimension::DiscretizedReal { .. }, Choice::Int(v)) => self.encode(&Choice::Real(*v as f64)),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        match self {
            Dimension::Categorical { labels } => {
                if labels.is_empty() {
                    return Err(HarnessError::Space("categorical dimension has no labels".into()));
                }
                let mut sorted = labels.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() != labels.len() {
                    return Err(HarnessError::Space("categorical labels must be unique".into()));
                }
            }
            Dimension::IntegerRange { lo, hi, step } => {
                if *step < 1 || hi < lo {
                    return Err(HarnessError::Space(format!(
                        "integer_range({lo}, {hi}, {step}) has no choices"
                    )));
                }
            }
            Dimension::DiscretizedReal { lo, hi, points } => {
                if *points == 0 || !lo.is_finite() || !hi.is_finite() || (*points > 1 && !(lo < hi)) {
                    return Err(HarnessError::Space(format!(
                        "discretized_real({lo}, {hi}, {points}) has no choices"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Grid point `i` of `points` equally spaced values, endpoints inclusive.
pub(crate) fn real_point(lo: f64, hi: f64, points: usize, i: usize) -> f64 {
    if points == 1 {
        lo
    } else {
        lo + i as f64 * (hi - lo) / (points - 1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self, HarnessError> {
        if dims.is_empty() {
            return Err(HarnessError::Space("search space has no dimensions".into()));
        }
        for d in &dims {
            d.validate()?;
        }
        Ok(Self { dims })
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let root: Value = serde_json::from_str(text).map_err(|e| HarnessError::Space(format!("malformed JSON: {e}")))?;
        Self::from_value(&root)
    }

    pub fn from_value(root: &Value) -> Result<Self, HarnessError> {
        let dims = root
            .get("dims")
            .and_then(Value::as_array)
            .ok_or_else(|| HarnessError::Space("expected an object with a \"dims\" array".into()))?;
        let mut out = Vec::with_capacity(dims.len());
        for (k, d) in dims.iter().enumerate() {
            let kind = d
                .get("kind")
                .and_then(Value::as_str)
                .ok_or_else(|| HarnessError::Space(format!("dimension {k} has no \"kind\"")))?;
            if !matches!(kind, "categorical" | "integer_range" | "discretized_real") {
                return Err(HarnessError::Space(format!("dimension {k}: unknown kind {kind:?}")));
            }
            let dim: Dimension =
                serde_json::from_value(d.clone()).map_err(|e| HarnessError::Space(format!("dimension {k}: {e}")))?;
            out.push(dim);
        }
        Self::new(out)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("search space serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("search space serializes")
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.dims.iter().map(Dimension::size).collect()
    }

    pub fn grid_size(&self) -> usize {
        self.sizes().iter().product()
    }

    pub fn encode(&self, point: &[Choice]) -> Result<MultiIndex, HarnessError> {
        if point.len() != self.dims.len() {
            return Err(HarnessError::Space(format!(
                "point has {} coordinates, space has {}",
                point.len(),
                self.dims.len()
            )));
        }
        point
            .iter()
            .zip(&self.dims)
            .enumerate()
            .map(|(k, (c, d))| d.encode(c).ok_or_else(|| HarnessError::Space(format!("dimension {k}: {c:?} is not a choice"))))
            .collect()
    }

    pub fn decode(&self, index: &[usize]) -> Result<Vec<Choice>, HarnessError> {
        if index.len() != self.dims.len() {
            return Err(HarnessError::Space(format!("index {index:?} has wrong length")));
        }
        index
            .iter()
            .zip(&self.dims)
            .map(|(&i, d)| d.decode(i).ok_or_else(|| HarnessError::Space(format!("index {index:?} out of range"))))
            .collect()
    }

    /// `dims` categorical dimensions of `choices` labels each.
    pub fn categorical_grid(dims: usize, choices: usize) -> Self {
        let labels: Vec<String> = (0..choices).map(|c| format!("op{c}")).collect();
        Self::new(vec![Dimension::Categorical { labels }; dims]).expect("non-empty grid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn categorical_encode() {
        let s = SearchSpace::from_json(r#"{"dims":[{"kind":"categorical","labels":["a","b","c"]}]}"#).unwrap();
        assert_eq!(s.encode(&[Choice::Label("b".into())]).unwrap(), vec![1]);
    }

    #[test]
    fn integer_range_choices() {
        let s = SearchSpace::from_json(r#"{"dims":[{"kind":"integer_range","lo":2,"hi":10,"step":2}]}"#).unwrap();
        assert_eq!(s.sizes(), vec![5]);
        assert_eq!(s.decode(&[4]).unwrap(), vec![Choice::Int(10)]);
        let all: Vec<_> = (0..5).map(|i| s.decode(&[i]).unwrap()[0].clone()).collect();
        assert_eq!(all, [2, 4, 6, 8, 10].map(Choice::Int).to_vec());
    }

    #[test]
    fn nats_shape() {
        let dims = r#"{"kind":"categorical","labels":["none","skip","conv1x1","conv3x3","avgpool3x3"]}"#;
        let text = format!(r#"{{"dims":[{}]}}"#, vec![dims; 6].join(","));
        let s = SearchSpace::from_json(&text).unwrap();
        assert_eq!(s.grid_size(), 15_625);
    }

    #[test]
    fn discretized_real_endpoints() {
        let d = Dimension::DiscretizedReal { lo: -1.0, hi: 1.0, points: 5 };
        assert_eq!(d.decode(0), Some(Choice::Real(-1.0)));
        assert_eq!(d.decode(2), Some(Choice::Real(0.0)));
        assert_eq!(d.decode(4), Some(Choice::Real(1.0)));
        assert_eq!(d.decode(5), None);
    }

    #[test]
    fn errors() {
        assert!(matches!(SearchSpace::from_json("{"), Err(HarnessError::Space(m)) if m.contains("malformed")));
        assert!(matches!(
            SearchSpace::from_json(r#"{"dims":[{"kind":"ordinal","labels":["a"]}]}"#),
            Err(HarnessError::Space(m)) if m.contains("unknown kind")
        ));
        assert!(SearchSpace::from_json(r#"{"dims":[{"kind":"categorical","labels":[]}]}"#).is_err());
        assert!(SearchSpace::from_json(r#"{"dims":[{"kind":"integer_range","lo":5,"hi":1,"step":1}]}"#).is_err());
        assert!(SearchSpace::from_json(r#"{"dims":[]}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = SearchSpace::new(vec![
            Dimension::Categorical { labels: vec!["x".into(), "y".into()] },
            Dimension::IntegerRange { lo: -3, hi: 3, step: 3 },
            Dimension::DiscretizedReal { lo: 0.0, hi: 1.0, points: 4 },
        ])
        .unwrap();
        assert_eq!(SearchSpace::from_json(&s.to_json()).unwrap(), s);
    }

    fn arb_dim() -> impl Strategy<Value = Dimension> {
        prop_oneof![
            (1usize..6).prop_map(|n| Dimension::Categorical { labels: (0..n).map(|i| format!("l{i}")).collect() }),
            (-20i64..20, 0i64..30, 1i64..5).prop_map(|(lo, span, step)| Dimension::IntegerRange { lo, hi: lo + span, step }),
            (-100.0f64..100.0, 0.1f64..50.0, 1usize..8).prop_map(|(lo, w, points)| Dimension::DiscretizedReal { lo, hi: lo + w, points }),
        ]
    }

    proptest! {
        #[test]
        fn encode_decode_bijection(dims in prop::collection::vec(arb_dim(), 1..5), seed in any::<u64>()) {
            let space = SearchSpace::new(dims).unwrap();
            let reparsed = SearchSpace::from_json(&space.to_json()).unwrap();
            let mut rng = crate::Rng::new(seed);
            for _ in 0..20 {
                let idx: Vec<usize> = space.sizes().iter().map(|&n| rng.int(n).unwrap()).collect();
                let point = space.decode(&idx).unwrap();
                prop_assert_eq!(&space.encode(&point).unwrap(), &idx);
                // Points survive JSON as well.
                let json = serde_json::to_string(&point).unwrap();
                let back: Vec<Choice> = serde_json::from_str(&json).unwrap();
                prop_assert_eq!(reparsed.encode(&back).unwrap(), idx);
            }
        }
    }
}
