import { App } from './app';

const app = new App(document);
app.start().catch((error) => {
  const banner = document.getElementById('banner')!;
  banner.textContent = `failed to start: ${error}`;
  banner.className = 'banner error';
});
