/** DOM rendering for the review queue. Everything shown comes from service
 * responses held in the QueueModel snapshot; this layer only draws. */
import { groupCatalog } from "./queue.js";
import { ageSeconds, barWidth, describeHistory, difficultyBadge, displayedMass, marginSummary, percent, } from "./format.js";
function el(tag, className, text) {
    const node = document.createElement(tag);
    if (className)
        node.className = className;
    if (text !== undefined)
        node.textContent = text;
    return node;
}
function renderBanner(ctx, snapshot) {
    const conn = snapshot.connection;
    if (conn.kind === "ok")
        return null;
    const banner = el("div", "banner");
    if (conn.kind === "auth-required") {
        banner.append(el("span", "", "authentication required — enter the service token:"));
        const input = el("input");
        input.type = "password";
        input.placeholder = "token";
        const button = el("button", "", "save token");
        button.addEventListener("click", () => ctx.onToken(input.value));
        banner.append(input, button);
    }
    else {
        banner.append(el("span", "", `service unreachable: ${conn.message}`));
        const button = el("button", "", "retry now");
        button.addEventListener("click", () => ctx.onRetry());
        banner.append(button);
    }
    return banner;
}
function renderPicker(ctx, review) {
    const wrap = el("div", "picker");
    const select = el("select");
    const prompt = el("option", "", "pick any exercise by category…");
    prompt.value = "";
    select.append(prompt);
    for (const [group, entries] of groupCatalog(ctx.catalog)) {
        const optgroup = document.createElement("optgroup");
        optgroup.label = group;
        for (const entry of entries) {
            const option = el("option", "", `${entry.name} ${difficultyBadge(entry.difficulty)}`);
            option.value = String(entry.id);
            optgroup.append(option);
        }
        select.append(optgroup);
    }
    const submit = el("button", "", "submit correction");
    submit.disabled = true;
    select.addEventListener("change", () => {
        submit.disabled = select.value === "";
    });
    submit.addEventListener("click", () => {
        if (select.value !== "") {
            void ctx.model.submit(review.review_id, Number(select.value));
        }
    });
    wrap.append(select, submit);
    return wrap;
}
function renderCard(ctx, review) {
    const card = el("article", "card");
    const header = el("header");
    header.append(el("strong", "", `review ${review.review_id}`), el("span", "meta", `user ${review.user_id} · ${ageSeconds(review, Date.now())}s ago`));
    card.append(header);
    if (review.user_summary) {
        const fields = Object.entries(review.user_summary)
            .map(([k, v]) => `${k}: ${v === null ? "—" : v}`)
            .join("   ");
        card.append(el("div", "summary", fields));
    }
    card.append(el("div", "margin", marginSummary(review)));
    card.append(el("div", "history", `recent: ${describeHistory(review)}`));
    const list = el("div", "candidates");
    const mass = displayedMass(review.candidates);
    list.append(el("div", "mass", `top-${review.candidates.length} mass ${percent(mass)}`));
    review.candidates.forEach((candidate, rank) => {
        const row = el("div", "candidate");
        const bar = el("div", "bar");
        bar.style.width = `${barWidth(candidate, review.candidates)}%`;
        const label = el("span", "", `${candidate.name} ${difficultyBadge(candidate.difficulty)} ${percent(candidate.probability)}`);
        row.append(bar, label);
        if (rank === 0) {
            const accept = el("button", "accept", "accept top-1");
            accept.addEventListener("click", () => {
                void ctx.model.submit(review.review_id, candidate.id);
            });
            row.append(accept);
        }
        list.append(row);
    });
    card.append(list);
    card.append(renderPicker(ctx, review));
    if (ctx.model.isSubmitting(review.review_id)) {
        card.append(el("div", "submitting", "submitting…"));
    }
    return card;
}
export function render(ctx, snapshot) {
    ctx.root.replaceChildren();
    const banner = renderBanner(ctx, snapshot);
    if (banner)
        ctx.root.append(banner);
    for (const notice of snapshot.notices) {
        const row = el("div", `notice ${notice.tone}`, `${notice.reviewId}: ${notice.message}`);
        const dismiss = el("button", "", "×");
        dismiss.addEventListener("click", () => {
            ctx.model.dismissNotice(notice.reviewId);
        });
        row.append(dismiss);
        ctx.root.append(row);
    }
    if (snapshot.reviews.length === 0) {
        ctx.root.append(el("div", "empty", "no pending reviews — the recommender is confident"));
        return;
    }
    for (const review of snapshot.reviews) {
        ctx.root.append(renderCard(ctx, review));
    }
}
//# sourceMappingURL=ui.js.map