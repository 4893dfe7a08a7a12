export type Point = [number, number];

export interface Geometry {
    room_radius: number;
    hazards: [number, number, number][]; // cx, cy, radius
}

export interface QueryView {
    id: string;
    seg1: Point[];
    seg2: Point[];
    geometry: Geometry;
}

export interface Progress {
    labeled: number;
    skipped: number;
    remaining: number;
}

export type Choice = "1" | "2" | "tie" | "skip";
