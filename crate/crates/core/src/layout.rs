//! Layout-aware text extraction over positioned glyph runs.
//!
//! Works in three passes per page: runs are grouped into lines by vertical
//! proximity, lines into blocks by vertical gap, and blocks are categorized
//! (title, body, footer) and merged in reading order into the slide text.
//! Coordinates use a bottom-left origin, so larger `y` is higher on the page.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{material_from_slides, LearningMaterial, ModelError};

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("malformed glyph on line {line}: {reason}")]
    MalformedGlyph { line: usize, reason: String },
    #[error("glyph on page {page} but document declares {page_count} pages")]
    PageOutOfRange { page: usize, page_count: usize },
    #[error("glyph document is missing its header record")]
    MissingHeader,
    #[error("glyph document declares zero pages")]
    NoPages,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("failed to read glyph document: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphRun {
    pub page: usize,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    #[serde(rename = "size")]
    pub font_size: f64,
    pub text: String,
}

impl GlyphRun {
    pub fn center_y(&self) -> f64 {
        (self.y0 + self.y1) / 2.0
    }

    fn validate(&self) -> Result<(), String> {
        let coords = [self.x0, self.y0, self.x1, self.y1, self.font_size];
        if coords.iter().any(|v| !v.is_finite()) {
            return Err("non-finite coordinate".into());
        }
        if self.x0 > self.x1 || self.y0 > self.y1 {
            return Err("inverted bounding box".into());
        }
        if self.font_size <= 0.0 {
            return Err("font size must be positive".into());
        }
        Ok(())
    }

    /// Total order used before grouping: top edge descending, then left
    /// edge ascending, then the remaining fields. Makes the output
    /// independent of input order.
    fn reading_cmp(&self, other: &Self) -> Ordering {
        self.page
            .cmp(&other.page)
            .then(other.y1.total_cmp(&self.y1))
            .then(self.x0.total_cmp(&other.x0))
            .then(other.y0.total_cmp(&self.y0))
            .then(self.x1.total_cmp(&other.x1))
            .then(self.font_size.total_cmp(&other.font_size))
            .then_with(|| self.text.cmp(&other.text))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    fn of(run: &GlyphRun) -> Self {
        Self {
            x0: run.x0,
            y0: run.y0,
            x1: run.x1,
            y1: run.y1,
        }
    }

    fn union(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center_y(&self) -> f64 {
        (self.y0 + self.y1) / 2.0
    }
}

/// Thresholds for the three extraction passes. All factors are relative to
/// font size, line height or page height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutParams {
    /// Runs share a line when their centers differ by at most this times the larger font size.
    pub line_center_tolerance: f64,
    /// A space is inserted when the horizontal gap exceeds this times the font size.
    pub space_gap_factor: f64,
    /// Lines join a block when the gap is at most this times the median line height.
    pub block_gap_factor: f64,
    pub title_font_ratio: f64,
    /// Fraction of page height at the bottom treated as footer band.
    pub footer_band: f64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            line_center_tolerance: 0.4,
            space_gap_factor: 0.25,
            block_gap_factor: 0.8,
            title_font_ratio: 1.2,
            footer_band: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub page: usize,
    pub bbox: BBox,
    pub runs: Vec<GlyphRun>,
    pub text: String,
}

impl Line {
    fn max_font(&self) -> f64 {
        self.runs.iter().map(|r| r.font_size).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockCategory {
    Title,
    Body,
    Footer,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextBlock {
    pub page: usize,
    pub bbox: BBox,
    pub category: BlockCategory,
    pub lines: Vec<String>,
    pub reading_index: usize,
    /// Font size carrying the most characters in the block.
    pub dominant_font_size: f64,
}

impl TextBlock {
    pub fn text(&self) -> String {
        self.lines.join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageStats {
    pub median_font_size: f64,
    pub page_height: f64,
    /// Top edge of the highest block on the page.
    pub top_y: f64,
}

/// Groups the runs of one page into lines, ordered top to bottom.
pub fn group_lines(glyphs: &[GlyphRun], params: &LayoutParams) -> Vec<Line> {
    let mut sorted: Vec<&GlyphRun> = glyphs.iter().collect();
    sorted.sort_by(|a, b| a.reading_cmp(b));

    // (anchor center, max font, members)
    let mut groups: Vec<(f64, f64, Vec<&GlyphRun>)> = Vec::new();
    for run in sorted {
        let center = run.center_y();
        let slot = groups.iter_mut().rev().find(|(anchor, font, _)| {
            (anchor - center).abs() <= params.line_center_tolerance * font.max(run.font_size)
        });
        match slot {
            Some((_, font, members)) => {
                *font = font.max(run.font_size);
                members.push(run);
            }
            None => groups.push((center, run.font_size, vec![run])),
        }
    }

    let mut lines: Vec<Line> = groups
        .into_iter()
        .map(|(_, _, mut members)| {
            members.sort_by(|a, b| a.x0.total_cmp(&b.x0).then_with(|| a.reading_cmp(b)));
            build_line(&members, params)
        })
        .collect();
    lines.sort_by(|a, b| {
        b.bbox
            .y1
            .total_cmp(&a.bbox.y1)
            .then(a.bbox.x0.total_cmp(&b.bbox.x0))
            .then_with(|| a.text.cmp(&b.text))
    });
    lines
}

fn build_line(members: &[&GlyphRun], params: &LayoutParams) -> Line {
    let mut text = String::new();
    let mut bbox = BBox::of(members[0]);
    let mut prev: Option<&GlyphRun> = None;
    for run in members {
        if let Some(p) = prev {
            let gap = run.x0 - p.x1;
            let threshold = params.space_gap_factor * p.font_size.max(run.font_size);
            let has_space = text.ends_with(char::is_whitespace) || run.text.starts_with(char::is_whitespace);
            if gap > threshold && !has_space {
                text.push(' ');
            }
        }
        text.push_str(&run.text);
        bbox = bbox.union(&BBox::of(run));
        prev = Some(run);
    }
    Line {
        page: members[0].page,
        bbox,
        runs: members.iter().map(|r| (*r).clone()).collect(),
        text,
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    }
}

/// Joins consecutive lines (already sorted top to bottom) into blocks.
/// Categories are left as `Body` and reading indices as 0 until
/// [`analyze_page`] orders and categorizes them.
pub fn group_blocks(lines: &[Line], params: &LayoutParams) -> Vec<TextBlock> {
    let mut heights: Vec<f64> = lines.iter().map(|l| l.bbox.height()).collect();
    let threshold = params.block_gap_factor * median(&mut heights);

    let mut blocks = Vec::new();
    let mut current: Vec<&Line> = Vec::new();
    for line in lines {
        if let Some(last) = current.last() {
            let gap = last.bbox.y0 - line.bbox.y1;
            if gap > threshold {
                blocks.push(make_block(&current));
                current.clear();
            }
        }
        current.push(line);
    }
    if !current.is_empty() {
        blocks.push(make_block(&current));
    }
    blocks
}

fn make_block(lines: &[&Line]) -> TextBlock {
    let mut bbox = lines[0].bbox;
    // font size bits -> character count
    let mut chars_by_font: BTreeMap<u64, usize> = BTreeMap::new();
    for line in lines {
        bbox = bbox.union(&line.bbox);
        for run in &line.runs {
            *chars_by_font.entry(run.font_size.to_bits()).or_default() +=
                run.text.chars().filter(|c| !c.is_whitespace()).count();
        }
    }
    let dominant_font_size = chars_by_font
        .iter()
        .map(|(bits, count)| (f64::from_bits(*bits), *count))
        .max_by(|a, b| a.1.cmp(&b.1).then(a.0.total_cmp(&b.0)))
        .map(|(size, _)| size)
        .unwrap_or_else(|| lines[0].max_font());
    TextBlock {
        page: lines[0].page,
        bbox,
        category: BlockCategory::Body,
        lines: lines.iter().map(|l| l.text.clone()).collect(),
        reading_index: 0,
        dominant_font_size,
    }
}

pub fn categorize_block(block: &TextBlock, stats: &PageStats, params: &LayoutParams) -> BlockCategory {
    if block.lines.iter().all(|l| l.trim().is_empty()) {
        return BlockCategory::Other;
    }
    let topmost = block.bbox.y1 >= stats.top_y;
    if topmost && block.dominant_font_size >= params.title_font_ratio * stats.median_font_size {
        return BlockCategory::Title;
    }
    if block.bbox.center_y() < params.footer_band * stats.page_height {
        return BlockCategory::Footer;
    }
    BlockCategory::Body
}

/// Runs all three passes over one page and returns its blocks in reading
/// order, categorized and indexed.
pub fn analyze_page(glyphs: &[GlyphRun], page_height: f64, params: &LayoutParams) -> Vec<TextBlock> {
    if glyphs.is_empty() {
        return Vec::new();
    }
    let lines = group_lines(glyphs, params);
    let mut blocks = group_blocks(&lines, params);
    blocks.sort_by(|a, b| b.bbox.y1.total_cmp(&a.bbox.y1).then(a.bbox.x0.total_cmp(&b.bbox.x0)));
    let mut sizes: Vec<f64> = glyphs.iter().map(|g| g.font_size).collect();
    let stats = PageStats {
        median_font_size: median(&mut sizes),
        page_height,
        top_y: blocks.iter().map(|b| b.bbox.y1).fold(f64::NEG_INFINITY, f64::max),
    };
    for (index, block) in blocks.iter_mut().enumerate() {
        block.category = categorize_block(block, &stats, params);
        block.reading_index = index;
    }
    blocks
}

/// Slide text for one page: title blocks first, then body blocks, each in
/// reading order. Footer and empty blocks are dropped.
pub fn merge_blocks(blocks: &[TextBlock]) -> String {
    let pick = |cat: BlockCategory| blocks.iter().filter(move |b| b.category == cat).map(TextBlock::text);
    pick(BlockCategory::Title)
        .chain(pick(BlockCategory::Body))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Header record of a glyph document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphHeader {
    pub page_count: usize,
    pub width: f64,
    pub height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlyphDocument {
    pub header: GlyphHeader,
    pub glyphs: Vec<GlyphRun>,
}

impl GlyphDocument {
    pub fn new(header: GlyphHeader, glyphs: Vec<GlyphRun>) -> Self {
        Self { header, glyphs }
    }

    /// Parses the line-oriented glyph format: a header object declaring
    /// `page_count`, `width` and `height`, then one glyph object per line.
    pub fn parse(input: &str) -> Result<Self, LayoutError> {
        Self::read(input.as_bytes())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, LayoutError> {
        let mut header: Option<GlyphHeader> = None;
        let mut glyphs = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |reason: String| LayoutError::MalformedGlyph { line: lineno, reason };
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
            if value.get("page_count").is_some() {
                if header.is_some() {
                    return Err(malformed("duplicate header record".into()));
                }
                header = Some(serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?);
                continue;
            }
            if header.is_none() {
                return Err(LayoutError::MissingHeader);
            }
            let run: GlyphRun = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
            run.validate().map_err(malformed)?;
            glyphs.push(run);
        }
        let header = header.ok_or(LayoutError::MissingHeader)?;
        Ok(Self { header, glyphs })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for g in &self.glyphs {
            out.push_str(&serde_json::to_string(g).expect("glyph serializes"));
            out.push('\n');
        }
        out
    }

    fn validate(&self) -> Result<(), LayoutError> {
        if self.header.page_count == 0 {
            return Err(LayoutError::NoPages);
        }
        for (idx, g) in self.glyphs.iter().enumerate() {
            g.validate()
                .map_err(|reason| LayoutError::MalformedGlyph { line: idx + 2, reason })?;
            if g.page >= self.header.page_count {
                return Err(LayoutError::PageOutOfRange {
                    page: g.page,
                    page_count: self.header.page_count,
                });
            }
        }
        Ok(())
    }

    /// Categorized blocks for every page, pages in order.
    pub fn pages(&self, params: &LayoutParams) -> Result<Vec<Vec<TextBlock>>, LayoutError> {
        self.validate()?;
        let mut by_page: Vec<Vec<GlyphRun>> = vec![Vec::new(); self.header.page_count];
        for g in &self.glyphs {
            by_page[g.page].push(g.clone());
        }
        Ok(by_page
            .iter()
            .map(|glyphs| analyze_page(glyphs, self.header.height, params))
            .collect())
    }
}

/// One slide text per declared page, including pages without glyphs.
pub fn slide_texts(doc: &GlyphDocument, params: &LayoutParams) -> Result<Vec<String>, LayoutError> {
    Ok(doc.pages(params)?.iter().map(|b| merge_blocks(b)).collect())
}

pub fn extract_slides(doc: &GlyphDocument) -> Result<LearningMaterial, LayoutError> {
    extract_slides_with(doc, &LayoutParams::default())
}

pub fn extract_slides_with(doc: &GlyphDocument, params: &LayoutParams) -> Result<LearningMaterial, LayoutError> {
    let texts = slide_texts(doc, params)?;
    let title = doc.header.title.as_deref().unwrap_or("untitled");
    Ok(material_from_slides(&texts, title)?)
}
