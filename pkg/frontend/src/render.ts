import type { PgmImage } from "./types.js";
import type { ViewState } from "./state.js";
import { grayToRgba, maskToOverlayRgba } from "./pgm.js";

const OVERLAY_TINT: [number, number, number] = [255, 64, 64];

export interface CaseBitmaps {
  image: ImageData;
  width: number;
  height: number;
  mask: PgmImage;
  overlayCache: { opacity: number; data: ImageData } | null;
}

export function prepareBitmaps(image: PgmImage, mask: PgmImage): CaseBitmaps {
  return {
    image: new ImageData(grayToRgba(image), image.width, image.height),
    width: image.width,
    height: image.height,
    mask,
    overlayCache: null,
  };
}

function overlayData(bitmaps: CaseBitmaps, opacity: number): ImageData {
  if (!bitmaps.overlayCache || bitmaps.overlayCache.opacity !== opacity) {
    bitmaps.overlayCache = {
      opacity,
      data: new ImageData(
        maskToOverlayRgba(bitmaps.mask, OVERLAY_TINT, opacity),
        bitmaps.mask.width,
        bitmaps.mask.height,
      ),
    };
  }
  return bitmaps.overlayCache.data;
}

let scratch: HTMLCanvasElement | null = null;

function drawImageData(ctx: CanvasRenderingContext2D, data: ImageData): void {
  // putImageData ignores the transform, so go through a scratch canvas
  if (!scratch) scratch = document.createElement("canvas");
  scratch.width = data.width;
  scratch.height = data.height;
  scratch.getContext("2d")!.putImageData(data, 0, 0);
  ctx.drawImage(scratch, 0, 0);
}

export function renderCase(
  canvas: HTMLCanvasElement,
  bitmaps: CaseBitmaps,
  state: ViewState,
): void {
  const ctx = canvas.getContext("2d")!;
  ctx.save();
  ctx.fillStyle = "#14161a";
  ctx.setTransform(1, 0, 0, 1, 0, 0);
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  ctx.translate(state.panX, state.panY);
  ctx.scale(state.zoom, state.zoom);
  ctx.imageSmoothingEnabled = state.zoom < 2;

  drawImageData(ctx, bitmaps.image);
  if (state.overlayOpacity > 0) {
    drawImageData(ctx, overlayData(bitmaps, state.overlayOpacity));
  }

  const fontPx = Math.max(10, 12 / state.zoom);
  ctx.font = `${fontPx}px sans-serif`;
  ctx.lineWidth = Math.max(0.75, 1.5 / state.zoom);
  for (const region of state.regions) {
    const [x, y, w, h] = region.bbox;
    const selected = state.selectedRegion === region.id;
    if (region.included) {
      ctx.strokeStyle = selected ? "#ffe066" : "#4dd06a";
      ctx.setLineDash([]);
    } else {
      // excluded regions stay visible but clearly struck out
      ctx.strokeStyle = selected ? "#ffe066" : "rgba(160, 160, 160, 0.8)";
      ctx.setLineDash([4 / state.zoom, 3 / state.zoom]);
    }
    ctx.strokeRect(x - 1.5, y - 1.5, w + 3, h + 3);
    ctx.fillStyle = region.included ? "#4dd06a" : "rgba(160, 160, 160, 0.8)";
    ctx.fillText(String(region.id), x, Math.max(fontPx, y - 3));
    if (!region.included) {
      ctx.beginPath();
      ctx.moveTo(x - 1.5, y - 1.5);
      ctx.lineTo(x + w + 1.5, y + h + 1.5);
      ctx.stroke();
    }
  }
  ctx.restore();
}

/** Canvas pixel coordinates back to image coordinates under zoom/pan. */
export function canvasToImage(
  state: ViewState,
  canvasX: number,
  canvasY: number,
): { x: number; y: number } {
  return {
    x: (canvasX - state.panX) / state.zoom,
    y: (canvasY - state.panY) / state.zoom,
  };
}
