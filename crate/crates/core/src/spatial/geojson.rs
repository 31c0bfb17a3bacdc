use serde_json::{json, Value};

use super::geometry::{Point, Polygon, Region};
use crate::error::{Error, Result};

fn parse_ring(v: &Value) -> Result<Vec<Point>> {
    let arr = v.as_array().ok_or_else(|| Error::Geometry("ring is not an array".into()))?;
    let mut ring = arr
        .iter()
        .map(|p| {
            let c = p.as_array().filter(|c| c.len() >= 2);
            match c.and_then(|c| Some([c[0].as_f64()?, c[1].as_f64()?])) {
                Some(pt) => Ok(pt),
                None => Err(Error::Geometry(format!("bad coordinate {p}"))),
            }
        })
        .collect::<Result<Vec<Point>>>()?;
    // GeoJSON repeats the first position at the end of every ring
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    Ok(ring)
}

fn parse_polygon(v: &Value) -> Result<Polygon> {
    let rings = v.as_array().ok_or_else(|| Error::Geometry("polygon is not an array".into()))?;
    let mut rings = rings.iter().map(parse_ring);
    let exterior = rings.next().ok_or_else(|| Error::Geometry("polygon without rings".into()))??;
    let holes = rings.collect::<Result<Vec<_>>>()?;
    Ok(Polygon { exterior, holes })
}

/// Reads a FeatureCollection of Polygon / MultiPolygon features; the site id
/// is taken from `properties[id_property]` (string or number).
pub fn regions_from_geojson(text: &str, id_property: &str) -> Result<Vec<Region>> {
    let doc: Value = serde_json::from_str(text)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Geometry("GeoJSON has no features array".into()))?;
    let mut out = Vec::with_capacity(features.len());
    for (idx, f) in features.iter().enumerate() {
        let id = match f.get("properties").and_then(|p| p.get(id_property)) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => {
                return Err(Error::Geometry(format!(
                    "feature {idx} has no '{id_property}' property"
                )))
            }
        };
        let geom = f
            .get("geometry")
            .ok_or_else(|| Error::Geometry(format!("feature {idx} has no geometry")))?;
        let coords = geom.get("coordinates").unwrap_or(&Value::Null);
        let polygons = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => vec![parse_polygon(coords)?],
            Some("MultiPolygon") => coords
                .as_array()
                .ok_or_else(|| Error::Geometry(format!("feature {idx}: bad MultiPolygon")))?
                .iter()
                .map(parse_polygon)
                .collect::<Result<_>>()?,
            other => {
                return Err(Error::Geometry(format!(
                    "feature {idx}: unsupported geometry type {other:?}"
                )))
            }
        };
        let region = Region::new(id, polygons);
        region.validate()?;
        out.push(region);
    }
    Ok(out)
}

fn closed(ring: &[Point]) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = ring.iter().map(|p| vec![p[0], p[1]]).collect();
    if ring.first() != ring.last() {
        if let Some(p) = ring.first() {
            pts.push(vec![p[0], p[1]]);
        }
    }
    pts
}

pub fn regions_to_geojson(regions: &[Region], id_property: &str) -> String {
    let features: Vec<Value> = regions
        .iter()
        .map(|r| {
            let polys: Vec<Value> = r
                .polygons
                .iter()
                .map(|p| {
                    let mut rings = vec![closed(&p.exterior)];
                    rings.extend(p.holes.iter().map(|h| closed(h)));
                    json!(rings)
                })
                .collect();
            let mut props = serde_json::Map::new();
            props.insert(id_property.to_string(), Value::String(r.id.clone()));
            json!({
                "type": "Feature",
                "properties": props,
                "geometry": { "type": "MultiPolygon", "coordinates": polys },
            })
        })
        .collect();
    serde_json::to_string_pretty(&json!({ "type": "FeatureCollection", "features": features }))
        .expect("GeoJSON value serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let regions = vec![
            Region::rectangle("a", 0.0, 0.0, 1.0, 2.0),
            Region::rectangle("b", 3.0, 0.0, 4.5, 1.0),
        ];
        let text = regions_to_geojson(&regions, "site_id");
        let back = regions_from_geojson(&text, "site_id").unwrap();
        assert_eq!(back, regions);
        assert!((back[0].area() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn numeric_ids_and_polygon_type() {
        let text = r#"{"type":"FeatureCollection","features":[{"type":"Feature",
            "properties":{"plant":17},
            "geometry":{"type":"Polygon","coordinates":[[[0,0],[2,0],[2,2],[0,2],[0,0]]]}}]}"#;
        let r = regions_from_geojson(text, "plant").unwrap();
        assert_eq!(r[0].id, "17");
        assert!(regions_from_geojson(text, "missing").is_err());
    }
}
