//! Browser bindings: parameter accounting and shape tracing for a chosen
//! configuration, returned as JSON strings.

use serde::Serialize;
use svdcnn::architecture::{
    closed_form_params, reduction_percent, standard_block_weights, tdsc_block_weights, ArchitectureSpec, Family, Model,
    ParamReport, LEVEL_CHANNELS,
};
use svdcnn::data::{quantize, Vocabulary};
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Level {
    channels: usize,
    conv_layers: usize,
}

#[derive(Serialize)]
struct Description {
    name: String,
    params: ParamReport,
    levels: Vec<Level>,
}

#[derive(Serialize)]
struct BlockComparison {
    c_in: usize,
    c_out: usize,
    standard: usize,
    separable: usize,
    reduction_percent: f64,
}

#[derive(Serialize)]
struct Stage {
    stage: String,
    channels: usize,
    len: usize,
}

#[derive(Serialize)]
struct Trace {
    input_len: usize,
    nonpadding: usize,
    stages: Vec<Stage>,
}

fn spec(family: &str, depth: usize, classes: usize) -> Result<ArchitectureSpec, String> {
    let family: Family = family.parse().map_err(|e: svdcnn::Error| e.to_string())?;
    let spec = ArchitectureSpec::new(family, depth, classes);
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn to_json(value: &impl Serialize) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

pub fn describe(family: &str, depth: usize, classes: usize) -> Result<String, String> {
    let spec = spec(family, depth, classes)?;
    let params = closed_form_params(&spec).map_err(|e| e.to_string())?;
    let layout = spec.layout().map_err(|e| e.to_string())?;
    let levels = LEVEL_CHANNELS
        .iter()
        .zip(layout)
        .map(|(&channels, conv_layers)| Level { channels, conv_layers })
        .collect();
    to_json(&Description {
        name: format!("{}-{}", spec.family, spec.depth),
        params,
        levels,
    })
}

pub fn block_params(c_in: usize, c_out: usize) -> Result<String, String> {
    if c_in == 0 || c_out == 0 {
        return Err("channel counts must be positive".into());
    }
    let standard = standard_block_weights(c_in, c_out);
    let separable = tdsc_block_weights(c_in, c_out);
    to_json(&BlockComparison {
        c_in,
        c_out,
        standard,
        separable,
        reduction_percent: reduction_percent(standard, separable),
    })
}

/// Feature-map shapes of an SVDCNN or VDCNN forward pass on `text`.
pub fn shape_trace(family: &str, depth: usize, text: &str) -> Result<String, String> {
    let spec = spec(family, depth, 4)?;
    let model = Model::<f32>::build(&spec, 0).map_err(|e| e.to_string())?;
    let input = quantize(text, &Vocabulary::default(), spec.seq_len);
    let stages = model
        .trace_shapes(&input)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|s| Stage {
            stage: s.stage,
            channels: s.channels,
            len: s.len,
        })
        .collect();
    to_json(&Trace {
        input_len: input.len(),
        nonpadding: input.iter().filter(|&&i| i != 0).count(),
        stages,
    })
}

#[wasm_bindgen]
pub fn describe_json(family: &str, depth: usize, classes: usize) -> Result<String, JsError> {
    describe(family, depth, classes).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn block_params_json(c_in: usize, c_out: usize) -> Result<String, JsError> {
    block_params(c_in, c_out).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn shape_trace_json(family: &str, depth: usize, text: &str) -> Result<String, JsError> {
    shape_trace(family, depth, text).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(s: Result<String, String>) -> Value {
        serde_json::from_str(&s.unwrap()).unwrap()
    }

    #[test]
    fn describe_reports_totals_and_levels() {
        let v = parse(describe("svdcnn", 29, 4));
        assert_eq!(v["name"], "svdcnn-29");
        assert_eq!(v["params"]["conv"], 1_532_224);
        let layers: Vec<u64> = v["levels"]
            .as_array()
            .unwrap()
            .iter()
            .map(|l| l["conv_layers"].as_u64().unwrap())
            .collect();
        assert_eq!(layers, [10, 10, 4, 4]);
    }

    #[test]
    fn describe_rejects_bad_input() {
        assert!(describe("resnet", 9, 4).is_err());
        assert!(describe("vdcnn", 13, 4).unwrap_err().contains("13"));
    }

    #[test]
    fn block_comparison() {
        let v = parse(block_params(128, 256));
        assert_eq!(v["standard"], 294_912);
        assert_eq!(v["separable"], 99_456);
        assert_eq!(v["reduction_percent"], 66.28);
        assert!(block_params(0, 4).is_err());
    }

    #[test]
    fn trace_counts_characters() {
        let v = parse(shape_trace("svdcnn", 9, "hello world"));
        assert_eq!(v["input_len"], 1024);
        assert_eq!(v["nonpadding"], 11);
        let stages = v["stages"].as_array().unwrap();
        assert!(stages.iter().any(|s| s["channels"] == 512 && s["len"] == 128));
    }
}
