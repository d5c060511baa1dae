(() => {
  // __webenvSnapshot
  const SKIP = new Set(["SCRIPT", "STYLE", "NOSCRIPT", "TEMPLATE", "HEAD", "META", "LINK", "svg"]);
  const ATTRS = ["aria-label", "placeholder", "type", "name", "role", "value", "title", "alt", "contenteditable", "href", "id"];
  const ROLES = new Set(["button", "link", "checkbox", "menuitem", "tab", "option", "radio", "switch", "combobox", "textbox", "listbox"]);
  const paths = {};

  const visible = (el) => {
    const s = getComputedStyle(el);
    if (s.display === "none" || s.visibility === "hidden") return false;
    return el.getClientRects().length > 0;
  };

  const interactive = (el) => {
    const t = el.tagName;
    if (t === "A") return el.hasAttribute("href");
    if (t === "BUTTON" || t === "SELECT" || t === "TEXTAREA" || t === "SUMMARY") return true;
    if (t === "INPUT") return el.type !== "hidden";
    const role = el.getAttribute("role");
    if (role && ROLES.has(role)) return true;
    if (el.isContentEditable && el.getAttribute("contenteditable") !== null) return true;
    if (el.hasAttribute("onclick")) return true;
    const tab = el.getAttribute("tabindex");
    return tab !== null && tab !== "-1";
  };

  const hasInteractive = (n) => n.interactive === true || n.children.some(hasInteractive);

  const squash = (s) => (s || "").replace(/\s+/g, " ").trim();

  const build = (el, path) => {
    const node = { tag: el.tagName.toLowerCase(), text: "", attributes: {}, children: [] };
    for (const a of ATTRS) {
      const v = el.getAttribute(a);
      if (v !== null) node.attributes[a] = v;
    }
    if ((el.tagName === "INPUT" || el.tagName === "TEXTAREA") && el.value) node.attributes.value = el.value;
    const own = [];
    const isInteractive = interactive(el);
    if (isInteractive) {
      node.interactive = true;
      paths[path] = el;
      if (el.tagName === "SELECT") {
        const opt = el.options[el.selectedIndex];
        node.text = opt ? squash(opt.text) : "";
      } else if (el.tagName !== "INPUT" && el.tagName !== "TEXTAREA") {
        node.text = squash(el.innerText);
      }
    }
    let i = 0;
    for (const c of el.childNodes) {
      if (c.nodeType === 3) {
        if (!isInteractive) {
          const t = squash(c.textContent);
          if (t) own.push(t);
        }
      } else if (c.nodeType === 1 && !SKIP.has(c.tagName) && visible(c)) {
        const p = path === "" ? String(i) : path + "/" + i;
        const child = build(c, p);
        if (!isInteractive || hasInteractive(child)) {
          node.children.push(child);
          i += 1;
        } else {
          for (const k of Object.keys(paths)) if (k === p || k.startsWith(p + "/")) delete paths[k];
        }
      }
    }
    if (!isInteractive) node.text = own.join(" ");
    return node;
  };

  const root = build(document.body || document.documentElement, "");
  window.__webenvPaths = paths;
  return JSON.stringify({
    root,
    url: location.href,
    title: document.title,
    text: squash(document.body ? document.body.innerText : ""),
  });
})()
