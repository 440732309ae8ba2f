(function () {
  "use strict";
  var app = document.getElementById("app");
  var banner = document.getElementById("banner");

  function fail(msg) {
    banner.textContent = msg;
    banner.className = "banner error";
  }

  var doc;
  try {
    doc = JSON.parse(document.getElementById("stackscope-data").textContent);
  } catch (e) {
    fail("Report data is malformed: " + e.message);
    return;
  }
  if (!doc || doc.schema_version !== 1 || !doc.root) {
    fail("Unsupported report schema (expected version 1).");
    return;
  }

  var total = doc.metadata.total_samples;
  banner.textContent = total + " samples";
  if (total === 0) return;

  var rows = [];
  var expanded = Object.create(null);
  var query = "";

  function pct(n) {
    return total ? ((100 * n) / total).toFixed(2) + "%" : "0%";
  }

  function index(node, path, depth, parent) {
    var entry = { node: node, path: path, depth: depth, parent: parent, el: null, kids: [] };
    rows.push(entry);
    node.children.forEach(function (c) {
      entry.kids.push(index(c, path + "/" + c.name, depth + 1, entry));
    });
    return entry;
  }

  var root = index(doc.root, "", 0, null);

  function build(entry) {
    var div = document.createElement("div");
    div.className = "row";
    div.style.paddingLeft = entry.depth * 16 + "px";
    var toggle = document.createElement("span");
    toggle.className = "toggle";
    toggle.textContent = entry.kids.length ? "▸" : " ";
    var name = document.createElement("span");
    name.className = "name";
    name.textContent = entry.node.name;
    var nums = document.createElement("span");
    nums.className = "nums";
    nums.textContent =
      entry.node.inclusive + " incl · " + entry.node.self + " self · " + pct(entry.node.inclusive);
    var bar = document.createElement("span");
    bar.className = "bar";
    bar.style.width = (total ? (100 * entry.node.inclusive) / total : 0) + "%";
    div.appendChild(toggle);
    div.appendChild(name);
    div.appendChild(nums);
    div.appendChild(bar);
    div.addEventListener("click", function () {
      if (!entry.kids.length) return;
      expanded[entry.path] = !expanded[entry.path];
      refresh();
    });
    entry.el = div;
    entry.toggle = toggle;
    entry.name = name;
    app.appendChild(div);
  }

  rows.forEach(build);

  function visible(entry) {
    for (var p = entry.parent; p; p = p.parent) if (!expanded[p.path]) return false;
    return true;
  }

  function refresh() {
    rows.forEach(function (e) {
      e.el.style.display = visible(e) ? "" : "none";
      if (e.kids.length) e.toggle.textContent = expanded[e.path] ? "▾" : "▸";
      var hit = query && e.node.name.indexOf(query) >= 0;
      e.name.className = hit ? "name hit" : "name";
    });
  }

  function expandToLevel(k) {
    expanded = Object.create(null);
    rows.forEach(function (e) {
      if (e.depth < k) expanded[e.path] = true;
    });
    refresh();
  }

  function search(q) {
    query = q;
    if (q) {
      rows.forEach(function (e) {
        if (e.node.name.indexOf(q) >= 0)
          for (var p = e.parent; p; p = p.parent) expanded[p.path] = true;
      });
    }
    refresh();
  }

  document.getElementById("level").addEventListener("change", function (ev) {
    var k = parseInt(ev.target.value, 10);
    if (k >= 0) expandToLevel(k);
  });
  document.getElementById("collapse").addEventListener("click", function () {
    expanded = Object.create(null);
    refresh();
  });
  document.getElementById("search").addEventListener("input", function (ev) {
    search(ev.target.value);
  });

  expanded[root.path] = true;
  refresh();
  window.stackscope = { expandToLevel: expandToLevel, search: search, document: doc };
})();
