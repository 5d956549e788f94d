// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

import init, { fanout, matrix, packaged_scenarios, run_scenario_text } from './pkg/snapsafe_web.js';

const $ = (id) => document.getElementById(id);

function el(tag, attrs = {}, ...children) {
  const e = document.createElement(tag);
  Object.assign(e, attrs);
  e.append(...children);
  return e;
}

function summary(r) {
  const box = el('div');
  if (r.error) {
    box.append(el('p', { className: 'bad', textContent: r.error }));
    return box;
  }
  const rep = r.report;
  const verdict = rep.duplicates === 0 ? 'ok' : 'bad';
  box.append(
    el('p', {},
      `${r.guests} guests (per depth: ${r.guests_per_depth.join(', ')}), `,
      `${rep.emissions} nonces, ${rep.distinct} distinct, `,
      el('span', { className: verdict, textContent: `${rep.duplicates} duplicates` }),
      r.errors ? `, ${r.errors} error events` : ''),
  );
  if (rep.first_collision) {
    const c = rep.first_collision;
    box.append(el('p', {},
      `first collision: value ${c.value} from guest ${c.first.guest} at t=${c.first.tick}, `,
      `repeated by guest ${c.second.guest} at t=${c.second.tick}`));
  }
  box.append(el('p', {},
    `expected ${r.expect}: `,
    el('span', { className: r.as_expected ? 'ok' : 'bad', textContent: r.as_expected ? 'as expected' : 'mismatch' })));
  const more = r.log_lines > r.log_head.length ? `\n... ${r.log_lines - r.log_head.length} more lines` : '';
  box.append(el('pre', { textContent: r.log_head.join('\n') + more }));
  return box;
}

function later(fn) {
  // Let the browser paint the "running" note before the work starts.
  setTimeout(fn, 20);
}

$('fo-run').onclick = () => {
  const out = $('fo-out');
  out.replaceChildren(el('p', { className: 'muted', textContent: 'running...' }));
  later(() => {
    const t0 = performance.now();
    const r = JSON.parse(fanout(
      Number($('fo-fanout').value), Number($('fo-depth').value), Number($('fo-nonces').value),
      Number($('fo-seed').value), $('fo-fence').checked, $('fo-bump').checked));
    out.replaceChildren(summary(r),
      el('p', { className: 'muted', textContent: `${Math.round(performance.now() - t0)} ms` }));
  });
};

$('sc-run').onclick = () => {
  const out = $('sc-out');
  out.replaceChildren(el('p', { className: 'muted', textContent: 'running...' }));
  later(() => out.replaceChildren(summary(JSON.parse(run_scenario_text($('sc-text').value, $('sc-seed').value)))));
};

function renderMatrix(m) {
  const head = el('tr', {}, el('th'), ...m.mechanisms.map((n) => el('th', { textContent: n })));
  const rows = m.rows.map((r) => el('tr', {},
    el('td', { textContent: r.feature }),
    ...r.cells.map((c) => el('td', { textContent: c.probed ? c.value : `${c.value} *` }))));
  return [el('table', {}, head, ...rows),
    el('p', { className: 'muted', textContent: '* static value, not probed; other cells are computed by running the simulator' })];
}

await init();
const scenarios = JSON.parse(packaged_scenarios());
for (const s of scenarios) {
  $('sc-pick').append(el('option', { value: s.name, textContent: s.name }));
}
$('sc-pick').onchange = () => {
  $('sc-text').value = scenarios.find((s) => s.name === $('sc-pick').value).text;
};
$('sc-pick').value = 'toctou';
$('sc-pick').onchange();
$('mx-out').replaceChildren(...renderMatrix(JSON.parse(matrix())));
