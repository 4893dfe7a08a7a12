import type { Geometry, Point } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

/** Shared viewBox so both panes use identical scale and axes. */
export const viewBoxFor = (geometry: Geometry): string => {
    const pad = 0.15 * geometry.room_radius;
    const lo = -(geometry.room_radius + pad);
    const size = 2 * (geometry.room_radius + pad);
    return `${lo} ${lo} ${size} ${size}`;
};

export const isValidPolyline = (points: Point[]): boolean =>
    points.length >= 2 &&
    points.every((p) => Array.isArray(p) && p.length === 2 && p.every(Number.isFinite));

/** Room disc, shaded hazards, the path, and start/end markers. */
export const renderSegmentSvg = (polyline: Point[], geometry: Geometry): SVGSVGElement => {
    const svg = document.createElementNS(SVG_NS, "svg");
    svg.setAttribute("viewBox", viewBoxFor(geometry));
    svg.setAttribute("class", "segment-view");

    const room = document.createElementNS(SVG_NS, "circle");
    room.setAttribute("cx", "0");
    room.setAttribute("cy", "0");
    room.setAttribute("r", String(geometry.room_radius));
    room.setAttribute("fill", "#fafafa");
    room.setAttribute("stroke", "#444");
    room.setAttribute("stroke-width", String(geometry.room_radius * 0.012));
    svg.appendChild(room);

    for (const [cx, cy, r] of geometry.hazards) {
        const hz = document.createElementNS(SVG_NS, "circle");
        hz.setAttribute("cx", String(cx));
        hz.setAttribute("cy", String(cy));
        hz.setAttribute("r", String(r));
        hz.setAttribute("fill", "#e74c3c");
        hz.setAttribute("fill-opacity", "0.35");
        hz.setAttribute("class", "hazard");
        svg.appendChild(hz);
    }

    const path = document.createElementNS(SVG_NS, "polyline");
    path.setAttribute("points", polyline.map(([x, y]) => `${x},${y}`).join(" "));
    path.setAttribute("fill", "none");
    path.setAttribute("stroke", "#1f5fbf");
    path.setAttribute("stroke-width", String(geometry.room_radius * 0.015));
    path.setAttribute("stroke-linecap", "round");
    path.setAttribute("stroke-linejoin", "round");
    svg.appendChild(path);

    const markers: [Point, string, string][] = [
        [polyline[0], "#2ca02c", "start-marker"],
        [polyline[polyline.length - 1], "#d62728", "end-marker"],
    ];
    for (const [[x, y], color, cls] of markers) {
        const dot = document.createElementNS(SVG_NS, "circle");
        dot.setAttribute("cx", String(x));
        dot.setAttribute("cy", String(y));
        dot.setAttribute("r", String(geometry.room_radius * 0.03));
        dot.setAttribute("fill", color);
        dot.setAttribute("class", cls);
        svg.appendChild(dot);
    }
    return svg;
};

export const renderErrorCard = (message: string): HTMLDivElement => {
    const card = document.createElement("div");
    card.className = "error-card";
    card.textContent = `Cannot display this segment: ${message}. Press s to skip.`;
    return card;
};

/** True when the polyline enters any hazard circle (used by tests). */
export const polylineTouchesHazard = (polyline: Point[], geometry: Geometry): boolean =>
    polyline.some(([x, y]) =>
        geometry.hazards.some(([cx, cy, r]) => (x - cx) ** 2 + (y - cy) ** 2 <= r * r),
    );
