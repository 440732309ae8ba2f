use super::json::to_canonical_string;
use super::svg::escape;
use crate::calltree::CallTree;

/// Prebuilt viewer script embedded in every report.
pub const VIEWER_JS: &str = include_str!("../../assets/viewer.js");

/// Id of the `<script type="application/json">` element holding the tree.
pub const DATA_BLOCK_ID: &str = "stackscope-data";

const STYLE: &str = "\
body{font:13px/1.4 system-ui,sans-serif;margin:1.5em;color:#222}
.banner{font-weight:600;margin:.5em 0}.banner.error{color:#b00}
.controls{margin:.5em 0 1em}.controls>*{margin-right:.75em}
.row{position:relative;cursor:pointer;white-space:nowrap;padding:1px 0}
.row:hover{background:#f3f3f3}.toggle{display:inline-block;width:1.2em}
.name.hit{background:#ffe58a}.nums{color:#666;margin-left:1em}
.bar{position:absolute;left:0;bottom:0;height:2px;background:#4e79a7}
footer{margin-top:2em;color:#777;font-size:11px}";

/// Makes JSON safe inside a script element; `<` only occurs in strings.
fn embed(json: &str) -> String {
    json.replace('<', "\\u003c")
}

pub fn render(tree: &CallTree) -> String {
    let json = to_canonical_string(tree);
    let m = &tree.metadata;
    let title = if m.target.is_empty() {
        "stackscope report".to_string()
    } else {
        format!("stackscope report: {}", m.target)
    };
    format!(
        r#"<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>{title}</title>
<style>
{STYLE}
</style>
</head>
<body>
<h1>{title}</h1>
<div id="banner" class="banner">{total} samples</div>
<div class="controls">
<label>Expand to level <input id="level" type="number" min="0" value="1" size="3"></label>
<button id="collapse" type="button">Collapse all</button>
<input id="search" type="search" placeholder="Search functions">
</div>
<div id="app"></div>
<footer>Expanding levels here only hides rows; counts are never recombined. Use the analyzer's level option for aggregated truncated views.</footer>
<script type="application/json" id="{DATA_BLOCK_ID}">
{data}</script>
<script>
{VIEWER_JS}</script>
</body>
</html>
"#,
        title = escape(&title),
        total = tree.total_samples,
        data = embed(&json),
    )
}

/// Returns the inlined data block of a rendered report.
pub fn extract_data_block(html: &str) -> Option<&str> {
    let open = format!(r#"<script type="application/json" id="{DATA_BLOCK_ID}">"#);
    let start = html.find(&open)? + open.len();
    let len = html[start..].find("</script>")?;
    Some(&html[start..start + len])
}
